"""Patch-based image priors from normalizing flows, with reconstruction tools."""

__version__ = "0.1.0"
