"""Multimodal analysis of curiosity dynamics in small-group interaction."""
__version__ = "0.1.0"
