"""Keyed high-frequency audio signatures."""
