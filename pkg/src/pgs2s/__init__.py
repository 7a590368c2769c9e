"""Policy-gradient sequence-to-sequence forecasting with an auxiliary model pool."""

__version__ = "0.1.0"
