"""Advantage-feedback plan refinement for cooperative multi-agent games."""

__version__ = "0.1.0"
