"""Packaged demo dataset: a small synthetic panel with the full feature
surface (crosswalk merges, a zone-definition switch in 2002, singleton
zones, anchored metropolitan units, program flags)."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .panel import (IngestResult, ingest_panel, read_crosswalk_csv,
                    read_panel_csv, read_partitions_csv)


def demo_paths() -> dict[str, Path]:
    """Absolute paths of the packaged demo CSV files."""
    base = resources.files("moranfield") / "data"
    return {
        "panel": Path(str(base / "demo_panel.csv")),
        "crosswalk": Path(str(base / "demo_crosswalk.csv")),
        "partitions": Path(str(base / "demo_partitions.csv")),
        "program": Path(str(base / "demo_program.csv")),
    }


def load_demo(start: int = 1984, end: int = 2019) -> IngestResult:
    """Ingest the packaged demo panel over [start, end]."""
    paths = demo_paths()
    return ingest_panel(
        read_panel_csv(paths["panel"]),
        crosswalk=read_crosswalk_csv(paths["crosswalk"]),
        partitions=read_partitions_csv(paths["partitions"]),
        start=start, end=end,
    )
