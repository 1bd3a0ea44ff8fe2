"""Desk-scale federated self-training simulator for transducer ASR models."""

__version__ = "0.1.0"
