"""Run configuration: one TOML document plus command-line overrides.

The file is the canonical record of a run. Relative input paths are
resolved against the directory containing the config file, so a config
checked in next to its data keeps working from anywhere; the output
directory is resolved against the working directory unless overridden.

Recognized sections and keys (all optional unless noted):

    [inputs]   panel (required), partitions (required), crosswalk, program
    [window]   start (required), end (required)
    [grid]     nx, ny, and optionally all of x0, x1, y0, y1
    [estimator] h, alpha, pilot_mean ("geometric"|"literal"), min_mass
    [tune]     h_grid, alpha_grid, step, stall_limit, holdout_fraction
    [bootstrap] replicates, seed, min_replicates
    [flow]     step, horizon, record_stride
    [attractors] horizon, early_stop, merge_radius, min_share,
               assign_factor, labels
    [diag]     years = [y0, y1]
    [plot]     arrow_scale, min_mass
    [output]   dir

Unknown sections or keys are rejected: a misspelled key silently falling
back to a default would change results without a trace.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .tuning import ALPHA_GRID_DEFAULT, H_GRID_DEFAULT


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


_KNOWN = {
    "inputs": {"panel", "partitions", "crosswalk", "program"},
    "window": {"start", "end"},
    "grid": {"nx", "ny", "x0", "x1", "y0", "y1"},
    "estimator": {"h", "alpha", "pilot_mean", "min_mass"},
    "tune": {"h_grid", "alpha_grid", "step", "stall_limit", "holdout_fraction"},
    "bootstrap": {"replicates", "seed", "min_replicates"},
    "flow": {"step", "horizon", "record_stride"},
    "attractors": {"horizon", "early_stop", "merge_radius", "min_share",
                   "assign_factor", "labels"},
    "diag": {"years"},
    "plot": {"arrow_scale", "min_mass"},
    "output": {"dir"},
}


@dataclass
class RunConfig:
    panel: Path
    partitions: Path
    window_start: int
    window_end: int
    crosswalk: Path | None = None
    program: Path | None = None

    nx: int = 50
    ny: int = 50
    extent: tuple[float, float, float, float] | None = None

    h: float | None = None
    alpha: float | None = None
    pilot_mean: str = "geometric"
    min_mass: float = 0.0

    h_grid: tuple[float, ...] = H_GRID_DEFAULT
    alpha_grid: tuple[float, ...] = ALPHA_GRID_DEFAULT
    tune_step: float = 0.1
    stall_limit: float = 0.1
    holdout_fraction: float = 0.0

    replicates: int = 500
    seed: int = 0
    min_replicates: int = 20

    flow_step: float = 0.1
    horizon: float = 30.0
    record_stride: int = 10

    attractor_horizon: float = 500.0
    early_stop: float = 1e-6
    merge_radius: float = 0.5
    min_share: float = 0.01
    assign_factor: float = 1.5
    labels: tuple[str, ...] = ("urban", "suburban", "rural")

    diag_years: tuple[int, int] | None = None

    arrow_scale: float = 0.2
    plot_min_mass: float = 1.0

    out_dir: Path = field(default_factory=lambda: Path("out"))

    def validate(self) -> None:
        for name, path in (("panel", self.panel), ("partitions", self.partitions),
                           ("crosswalk", self.crosswalk), ("program", self.program)):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"[inputs] {name} file not found: {path}")
        if self.window_start >= self.window_end:
            raise ConfigError(f"window start {self.window_start} must precede "
                              f"end {self.window_end}")
        if self.nx < 2 or self.ny < 2:
            raise ConfigError(f"grid must be at least 2x2, got {self.nx}x{self.ny}")
        if self.h is not None and self.h <= 0:
            raise ConfigError(f"h must be positive, got {self.h}")
        if self.alpha is not None and not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must be in [0, 1), got {self.alpha}")
        if (self.h is None) != (self.alpha is None):
            raise ConfigError("h and alpha must be set together")
        if self.h is None and not (self.h_grid and self.alpha_grid):
            raise ConfigError("either explicit (alpha, h) or tune grids are required")
        if self.pilot_mean not in ("geometric", "literal"):
            raise ConfigError(f"pilot_mean must be 'geometric' or 'literal', "
                              f"got {self.pilot_mean!r}")
        if self.replicates < 0 or self.seed < 0:
            raise ConfigError("replicates and seed must be nonnegative")
        if self.record_stride < 1:
            raise ConfigError(f"record_stride must be >= 1, got {self.record_stride}")
        if self.diag_years is not None:
            a, b = self.diag_years
            if b != a + 1:
                raise ConfigError(f"[diag] years must be adjacent, got {a}, {b}")

    def require_smoothing(self) -> tuple[float, float]:
        if self.h is None or self.alpha is None:
            raise ConfigError("this command needs [estimator] h and alpha; set them "
                              "in the config (or via --h/--alpha), e.g. from a "
                              "previous `tune` run")
        return self.alpha, self.h


def _get(table: dict, section: str, key: str, kind, default):
    value = table.get(section, {}).get(key, default)
    if value is default:
        return default
    try:
        if kind is int and isinstance(value, bool):
            raise TypeError
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key}: expected {kind.__name__}, "
                          f"got {value!r}") from None


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            table = _toml.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None

    for section, content in table.items():
        if section not in _KNOWN:
            raise ConfigError(f"{path}: unknown section [{section}]")
        if not isinstance(content, dict):
            raise ConfigError(f"{path}: [{section}] must be a table")
        unknown = set(content) - _KNOWN[section]
        if unknown:
            raise ConfigError(f"{path}: unknown keys in [{section}]: {sorted(unknown)}")

    base = path.parent
    inputs = table.get("inputs", {})
    for req in ("panel", "partitions"):
        if req not in inputs:
            raise ConfigError(f"{path}: [inputs] {req} is required")
    window = table.get("window", {})
    for req in ("start", "end"):
        if req not in window:
            raise ConfigError(f"{path}: [window] {req} is required")

    def in_path(key: str) -> Path | None:
        raw = inputs.get(key)
        return (base / raw) if raw is not None else None

    grid = table.get("grid", {})
    extent_keys = [k for k in ("x0", "x1", "y0", "y1") if k in grid]
    if extent_keys and len(extent_keys) != 4:
        raise ConfigError(f"{path}: [grid] extent needs all of x0, x1, y0, y1")
    extent = (tuple(float(grid[k]) for k in ("x0", "x1", "y0", "y1"))
              if extent_keys else None)

    diag = table.get("diag", {})
    diag_years = None
    if "years" in diag:
        years = diag["years"]
        if not (isinstance(years, list) and len(years) == 2):
            raise ConfigError(f"{path}: [diag] years must be a two-element list")
        diag_years = (int(years[0]), int(years[1]))

    labels = table.get("attractors", {}).get("labels", ["urban", "suburban", "rural"])
    if not (isinstance(labels, list) and all(isinstance(s, str) for s in labels)):
        raise ConfigError(f"{path}: [attractors] labels must be a list of strings")

    def float_list(section: str, key: str, default) -> tuple[float, ...]:
        raw = table.get(section, {}).get(key)
        if raw is None:
            return tuple(default)
        if not isinstance(raw, list) or not raw:
            raise ConfigError(f"{path}: [{section}] {key} must be a non-empty list")
        return tuple(float(v) for v in raw)

    cfg = RunConfig(
        panel=base / inputs["panel"],
        partitions=base / inputs["partitions"],
        crosswalk=in_path("crosswalk"),
        program=in_path("program"),
        window_start=_get(table, "window", "start", int, None),
        window_end=_get(table, "window", "end", int, None),
        nx=_get(table, "grid", "nx", int, 50),
        ny=_get(table, "grid", "ny", int, 50),
        extent=extent,
        h=_get(table, "estimator", "h", float, None),
        alpha=_get(table, "estimator", "alpha", float, None),
        pilot_mean=_get(table, "estimator", "pilot_mean", str, "geometric"),
        min_mass=_get(table, "estimator", "min_mass", float, 0.0),
        h_grid=float_list("tune", "h_grid", H_GRID_DEFAULT),
        alpha_grid=float_list("tune", "alpha_grid", ALPHA_GRID_DEFAULT),
        tune_step=_get(table, "tune", "step", float, 0.1),
        stall_limit=_get(table, "tune", "stall_limit", float, 0.1),
        holdout_fraction=_get(table, "tune", "holdout_fraction", float, 0.0),
        replicates=_get(table, "bootstrap", "replicates", int, 500),
        seed=_get(table, "bootstrap", "seed", int, 0),
        min_replicates=_get(table, "bootstrap", "min_replicates", int, 20),
        flow_step=_get(table, "flow", "step", float, 0.1),
        horizon=_get(table, "flow", "horizon", float, 30.0),
        record_stride=_get(table, "flow", "record_stride", int, 10),
        attractor_horizon=_get(table, "attractors", "horizon", float, 500.0),
        early_stop=_get(table, "attractors", "early_stop", float, 1e-6),
        merge_radius=_get(table, "attractors", "merge_radius", float, 0.5),
        min_share=_get(table, "attractors", "min_share", float, 0.01),
        assign_factor=_get(table, "attractors", "assign_factor", float, 1.5),
        labels=tuple(labels),
        diag_years=diag_years,
        arrow_scale=_get(table, "plot", "arrow_scale", float, 0.2),
        plot_min_mass=_get(table, "plot", "min_mass", float, 1.0),
        out_dir=Path(table.get("output", {}).get("dir", "out")),
    )
    cfg.validate()
    return cfg


def apply_overrides(cfg: RunConfig, *, h: float | None = None,
                    alpha: float | None = None, replicates: int | None = None,
                    seed: int | None = None, grid: str | None = None,
                    window: str | None = None, out: str | None = None) -> RunConfig:
    """Apply command-line overrides on top of the file configuration."""
    if h is not None:
        cfg.h = float(h)
    if alpha is not None:
        cfg.alpha = float(alpha)
    if replicates is not None:
        cfg.replicates = int(replicates)
    if seed is not None:
        cfg.seed = int(seed)
    if grid is not None:
        try:
            nx, ny = grid.lower().split("x")
            cfg.nx, cfg.ny = int(nx), int(ny)
        except ValueError:
            raise ConfigError(f"--grid expects NxM (e.g. 50x50), got {grid!r}") from None
    if window is not None:
        try:
            y0, y1 = window.split(":")
            cfg.window_start, cfg.window_end = int(y0), int(y1)
        except ValueError:
            raise ConfigError(f"--window expects Y1:Y2, got {window!r}") from None
    if out is not None:
        cfg.out_dir = Path(out)
    cfg.validate()
    return cfg
