"""Neuroevolution of autoencoder anomaly detectors for multivariate time series."""

__version__ = "0.1.0"
