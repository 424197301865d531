"""cgkoop: conditional-Gaussian Koopman surrogates for partially observed
PDE systems, with analytic data assimilation, EnKF and interpolation
baselines, and spectral truth-data generation."""

__version__ = "0.1.0"
