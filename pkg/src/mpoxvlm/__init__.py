"""Desk-scale dual-encoder vision-language pipeline for mpox screening."""

__version__ = "0.1.0"
