"""Multimodal adversarial representation network for CTR prediction."""

__version__ = "0.1.0"
