"""Learned variable fixing for supply-chain planning MIPs."""

__version__ = "0.1.0"
