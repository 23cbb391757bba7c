"""Attested deterministic block production with vendor-diverse finality."""

__version__ = "0.1.0"
