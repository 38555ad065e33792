"""Certificateless consortium-ledger data protection with an APT detector."""

__version__ = "0.1.0"
