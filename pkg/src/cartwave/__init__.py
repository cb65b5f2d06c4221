"""Bayesian dyadic CART as structured Haar-wavelet shrinkage.

Submodules follow the pipeline: ``haar`` (multiscale representations),
``trees`` (tree priors), ``pinball`` (internal/external duality and
coefficient covariances), ``posterior`` (exact and MCMC tree posteriors),
``uq`` (median tree and credible bands), ``unbalanced`` (unbalanced Haar
bases and the non-dyadic prior), ``experiments`` (the replicated studies),
``config``/``cli`` (run configuration and the command line).
"""

__version__ = "0.1.0"
