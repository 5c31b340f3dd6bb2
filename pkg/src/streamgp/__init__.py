"""Spatio-temporal Gaussian process models for tails-up stream networks.

Library layout:

- ``network``: branching topology, connectivity and stream distances
- ``kernels``: moving-average covariance functions and Gram assembly
- ``latent``: uncertain-input parameterizations, KL terms, weight moments
- ``psi``: expectation statistics (closed form + Monte-Carlo oracle)
- ``likelihood``: censored observation model and local quadratic bounds
- ``bound``: collapsed variational lower bound and constraint set
- ``optimize``: constrained multi-start maximization
- ``predict``: variational and fixed-input GP prediction
- ``simulate``: synthetic truth, noise, censoring, missingness
- ``metrics``: scoring, outlier filtering, aggregation
- ``runner``/``cli``: experiment orchestration and command line
"""

__version__ = "0.1.0"
