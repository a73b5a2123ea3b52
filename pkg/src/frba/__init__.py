"""Federated risk-based authentication: features, local autoencoders, FedProx rounds and risk scoring."""

__version__ = "0.1.0"
