"""Constructive bi-Lipschitz extension, straightening and tracing on finite metric graphs."""

from __future__ import annotations

__version__ = "0.1.0"
