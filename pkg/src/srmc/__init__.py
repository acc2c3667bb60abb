"""Score-repellent Monte Carlo: history-tilted MCMC kernels and asymptotic-covariance tools."""

__version__ = "0.1.0"
