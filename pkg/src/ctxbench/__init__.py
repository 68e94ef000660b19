"""Context-sliced benchmark evaluation, split protocols, graph baselines and a dataset registry."""

__version__ = "0.1.0"
