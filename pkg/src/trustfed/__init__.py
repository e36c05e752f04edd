"""Trust-aware on-demand federated learning: trust scoring, bootstrapping and GA client deployment."""

__version__ = "0.1.0"
