"""Eigen-direction secondary voltage control for small transmission grids."""

from __future__ import annotations

import os
from pathlib import Path

from gridevd.network import Network, load_case

__version__ = "0.1.0"

FIXTURE_ENV = "GRIDEVD_FIXTURES"
BUNDLED = ("case9", "case14", "case30", "case57")


def fixture_dir() -> Path:
    """Directory holding the bundled cases, overridable through ``GRIDEVD_FIXTURES``."""
    override = os.environ.get(FIXTURE_ENV)
    return Path(override) if override else Path(__file__).parent / "data"


def load_fixture(name: str) -> Network:
    """Load a bundled case by name, e.g. ``"case9"``."""
    stem = name[:-2] if name.endswith(".m") else name
    return load_case(fixture_dir() / f"{stem}.m")
