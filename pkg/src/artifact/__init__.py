"""Simulation bench for wave-based and correlation-based imaging in random media."""
from __future__ import annotations

__version__ = "0.1.0"
