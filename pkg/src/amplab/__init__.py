"""
Amplab - A Numerical Laboratory for Individual Maximum Principles

Discretizes elliptic model operators and checks individual maximum and
anti-maximum principles: spectral-assumption checks, resolvent window scans,
the multi-point resolvent expansion, semigroup smoothing fits and mesh-robust
domination diagnostics.
"""

__version__ = "1.0.0"
__author__ = "Amplab contributors"
__description__ = "A Numerical Laboratory for Individual Maximum Principles"
