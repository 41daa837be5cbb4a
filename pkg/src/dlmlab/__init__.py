"""dlmlab: ELBO and direct-loss-minimisation training of mean-field Gaussian Bayesian networks."""
from dlmlab.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
