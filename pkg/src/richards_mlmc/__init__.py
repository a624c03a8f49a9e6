"""Uncertainty quantification for the stochastic Richards' equation.

Random soil fields (FFT moving-average sampling, Hermite-chaos marginals),
a modified Picard / cell-centered multigrid solver for the mixed form, and
Monte Carlo, multilevel and parametric-continuation multilevel estimators.
"""

__version__ = "0.1.0"
