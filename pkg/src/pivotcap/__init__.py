"""pivotcap: structure-guided captioning and pivot translation on synthetic scenes."""

__version__ = "0.1.0"
