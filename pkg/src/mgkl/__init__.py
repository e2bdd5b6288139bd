"""KL divergence estimation with multi-group attribution."""
__version__ = "0.1.0"
