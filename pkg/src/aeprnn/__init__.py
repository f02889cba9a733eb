"""Few-shot image restoration with a ReLU RNN viewed as an unrolled sparse coder."""

__version__ = "0.1.0"
