"""Numerical laboratory for conformally twisted geometry on the
noncommutative torus: algebra arithmetic, curvature kernels and modular
functional calculus, GNS heat traces, the twisted pseudodifferential
parametrix, and discretized Heisenberg bimodules."""

__version__ = "0.1.0"
