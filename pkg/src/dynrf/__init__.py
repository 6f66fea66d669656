"""Dynamic radiance fields for small moving objects in large static scenes."""

__version__ = "0.1.0"
