"""Synthetic 2D scan-matching SLAM harness."""
