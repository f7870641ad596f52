"""Few-shot image classification boosted by self-supervised auxiliary tasks."""

__version__ = "0.1.0"
