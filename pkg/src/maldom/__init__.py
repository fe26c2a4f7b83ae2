"""Malicious domain/URL classification toolkit: URL preprocessing, BPE
tokenization, masked-LM pre-training, character-level baselines and metrics."""

__version__ = "0.1.0"
