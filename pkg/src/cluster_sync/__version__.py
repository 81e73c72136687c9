"""
Centralized version management for Cluster Sync Lab.

Single source of truth read by the build backend.
"""

__version__ = "0.1.0"
