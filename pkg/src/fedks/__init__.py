"""Kuramoto-Sivashinsky data, POD baseline and federated autoencoder training."""

__version__ = "0.1.0"
