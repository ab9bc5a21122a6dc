"""Multimodal attribute extraction: encoders, fusion, contrastive training and hits@k evaluation."""

__version__ = "0.1.0"
