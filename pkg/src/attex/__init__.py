"""Sentiment attitude extraction with attentive context encoders."""

__version__ = "0.1.0"
