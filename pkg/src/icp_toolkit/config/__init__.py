"""Configuration for icp-toolkit."""
