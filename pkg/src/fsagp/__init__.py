"""Full-scale approximation Gaussian processes with random knots.

Modules
-------
covkernels  Bessel/Matern kernels, tapers, spatially varying parameters.
sparse      Sparse Cholesky with a reusable symbolic analysis.
fsa         Predictive-process plus tapered-remainder covariance operations.
sampler     Reversible-jump MCMC over trend, covariance parameters and knots.
predictor   Posterior prediction by conditional simulation.
harness     One-dimensional simulation studies and scoring rules.
io, cli     File formats and the ``fsagp`` command.
"""

__version__ = "0.1.0"
