"""Spoofing-aware speaker verification with fixed or joint optimisation."""

__version__ = "0.1.0"
