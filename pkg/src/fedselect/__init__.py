"""Seeded federated-learning simulator with a DDQL client-selection agent."""

__version__ = "0.1.0"
