"""Deterministic simulator and forensic toolkit for a blockchain-coordinated
affiliate escrow protocol (defensive study; symbolic crypto only)."""

__version__ = "0.1.0"
