"""Value-guided action-chunk tree search on a deterministic grid manipulation benchmark."""

__version__ = "0.1.0"
