"""Cluster synchronization lab for pinned linear agents on switching networks."""

from .__version__ import __version__

__all__ = ["__version__"]
