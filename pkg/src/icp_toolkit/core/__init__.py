"""Geometry, correspondence search, alignment solvers, the ICP driver and the Bayes filter."""
