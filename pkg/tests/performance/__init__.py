"""Timing checks for the synthesis and simulation hot paths."""
