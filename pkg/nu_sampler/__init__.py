"""Data augmentation samplers for the Student-t degrees of freedom."""

__version__ = "0.1.0"
# Bumped whenever a CSV/JSON layout written by the package changes.
FORMAT_VERSION = "1"
