"""Linear-probe transfer benchmarking for fixed audio embeddings."""

__version__ = "0.1.0"
