"""De-biased representation learning for fairness under label corruption."""

__version__ = "0.1.0"
