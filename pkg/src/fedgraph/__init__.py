"""Federated GCN training simulator with probabilistic graph sampling and a
learned per-client sampling controller."""

__version__ = "0.1.0"
