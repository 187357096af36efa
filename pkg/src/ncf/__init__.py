"""Branch and load-address prediction from fused static/dynamic code graphs."""

__version__ = "0.1.0"
