"""Multimodal action classification on precomputed features."""

__version__ = "0.1.0"
