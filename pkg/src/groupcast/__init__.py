"""Group-attention quantile forecaster and rolling evaluation harness."""

__version__ = "0.1.0"
