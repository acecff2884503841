"""Label tooling for semi-supervised object detection."""

__version__ = "0.1.0"
