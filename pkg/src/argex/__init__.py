"""Event argument extraction with trigger-aware, syntax-attending Transformers."""

__version__ = "0.1.0"
