"""Moran space: zone-membership weights, point clouds, transitions and
descriptive spatial statistics.

The spatial weight matrix W is derived purely from zone membership: unit i
and j are neighbours iff they share a zone, with row-standardized weights
1/(n_zone - 1) and a zero diagonal. The neighbour average of unit i is the
leave-one-out mean of its zone-mates, so a unit in a singleton zone has no
defined neighbour value and is excluded from Moran-space analyses.

A unit's position in Moran space pairs its own log density with the
neighbour average:  z_j = (y_j, (Wy)_j).  A transition is the movement of
that position between the first and last year of a window,
delta_j = z_j(t0 + tau) - z_j(t0), computed with the partition valid at
each endpoint so that zone-definition switches show up in the lag
coordinate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse

from ._util import fmt_float
from .panel import Panel, PanelError, ZonePartition


class MoranError(ValueError):
    """Degenerate input for a Moran-space statistic."""


class WeightMatrix:
    """Row-standardized zone-membership weights over a fixed unit order.

    Stored as the zone grouping rather than an explicit matrix; the lag
    (neighbour average) of a value vector is computed from zone sums in
    O(N). `to_sparse` materializes the equivalent CSR matrix.
    """

    def __init__(self, units: Sequence[str], zones: Sequence[str]):
        if len(units) != len(zones):
            raise PanelError("units and zone assignments differ in length")
        self.units = tuple(units)
        zone_labels, codes = np.unique(np.asarray(zones, dtype=object), return_inverse=True)
        self.zone_labels = tuple(zone_labels)
        self.zone_codes = codes.astype(np.int64)
        self.zone_sizes = np.bincount(self.zone_codes, minlength=len(zone_labels))
        self.singleton = self.zone_sizes[self.zone_codes] == 1

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def singleton_units(self) -> tuple[str, ...]:
        return tuple(u for u, s in zip(self.units, self.singleton) if s)

    def lag(self, values: np.ndarray) -> np.ndarray:
        """Leave-one-out zone mean per unit; NaN for singleton zones."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_units,):
            raise PanelError(f"values shape {values.shape} does not match {self.n_units} units")
        zone_sum = np.bincount(self.zone_codes, weights=values, minlength=len(self.zone_labels))
        size = self.zone_sizes[self.zone_codes]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = (zone_sum[self.zone_codes] - values) / (size - 1)
        out[self.singleton] = np.nan
        return out

    def to_sparse(self) -> scipy.sparse.csr_matrix:
        rows, cols, vals = [], [], []
        order = np.argsort(self.zone_codes, kind="stable")
        bounds = np.searchsorted(self.zone_codes[order], np.arange(len(self.zone_labels) + 1))
        for z in range(len(self.zone_labels)):
            members = order[bounds[z]:bounds[z + 1]]
            n = len(members)
            if n < 2:
                continue
            w = 1.0 / (n - 1)
            for i in members:
                for j in members:
                    if i != j:
                        rows.append(i)
                        cols.append(j)
                        vals.append(w)
        return scipy.sparse.csr_matrix((vals, (rows, cols)),
                                       shape=(self.n_units, self.n_units))


def build_weights(partition: ZonePartition, units: Sequence[str]) -> WeightMatrix:
    """Weight matrix for the given unit order under one zone partition."""
    zones = [partition.zone(u) for u in units]
    return WeightMatrix(units, zones)


@dataclass(frozen=True)
class MoranPointSet:
    """Moran-space positions for one year, singleton-zone units excluded.

    `unit_indices` point back into the panel/weight-matrix unit order; the
    point order follows it.
    """

    unit_ids: tuple[str, ...]
    unit_indices: np.ndarray   # (n,) int, into the panel unit order
    own: np.ndarray            # (n,) log density
    lag: np.ndarray            # (n,) neighbour average
    year: int
    population: np.ndarray     # (n,) int64

    @property
    def coords(self) -> np.ndarray:
        return np.column_stack([self.own, self.lag])

    def __len__(self) -> int:
        return len(self.unit_ids)


def to_moran(panel: Panel, W: WeightMatrix, year: int) -> MoranPointSet:
    """Map the panel's units into Moran space for one year."""
    if W.units != panel.units:
        raise PanelError("weight matrix was built for a different unit order")
    y = panel.log_density_at(year)
    lag = W.lag(y)
    keep = ~W.singleton
    idx = np.flatnonzero(keep)
    return MoranPointSet(
        unit_ids=tuple(panel.units[i] for i in idx),
        unit_indices=idx,
        own=y[idx],
        lag=lag[idx],
        year=year,
        population=panel.population_at(year)[idx],
    )


@dataclass(frozen=True)
class TransitionSet:
    """Observed Moran-space movements over a window of tau years."""

    unit_ids: tuple[str, ...]
    starts: np.ndarray         # (n, 2) positions at t0
    deltas: np.ndarray         # (n, 2) z(t0+tau) - z(t0)
    tau: float
    t0: int | None = None
    t1: int | None = None

    def __len__(self) -> int:
        return len(self.unit_ids)

    @property
    def ends(self) -> np.ndarray:
        return self.starts + self.deltas


def transitions(panel: Panel, W_start: WeightMatrix, W_end: WeightMatrix,
                t0: int, t1: int) -> TransitionSet:
    """Movements between t0 and t1, with the partition valid at each endpoint.

    Only units that are non-singleton under both endpoint partitions are
    kept (the intersection).
    """
    if t1 <= t0:
        raise PanelError(f"transition window inverted: {t0} -> {t1}")
    p0 = to_moran(panel, W_start, t0)
    p1 = to_moran(panel, W_end, t1)
    common, i0, i1 = np.intersect1d(p0.unit_indices, p1.unit_indices,
                                    assume_unique=True, return_indices=True)
    if common.size == 0:
        raise PanelError(f"no unit is in a non-singleton zone in both {t0} and {t1}")
    starts = p0.coords[i0]
    ends = p1.coords[i1]
    return TransitionSet(
        unit_ids=tuple(panel.units[i] for i in common),
        starts=starts,
        deltas=ends - starts,
        tau=float(t1 - t0),
        t0=t0,
        t1=t1,
    )


# ---------------------------------------------------------------------------
# Global Moran's I with a permutation envelope
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MoranIResult:
    value: float
    band_lo: float
    band_hi: float
    permutations: int


def morans_i(points: MoranPointSet, W: WeightMatrix,
             permutations: int = 999, seed: int = 0) -> MoranIResult:
    """Global Moran's I of the own values, with a permutation envelope.

    With row-standardized W the statistic reduces to
    sum_i (y_i - mean)(lag_i - mean) / sum_i (y_i - mean)^2 over the
    included (non-singleton) units. The band is the 2.5/97.5 percentile of
    the statistic under `permutations` random reassignments of the values
    across those units.
    """
    y = points.own
    centered = y - y.mean()
    denom = float(centered @ centered)
    if denom <= 0.0:
        raise MoranError("Moran's I undefined: own values are constant")

    idx = points.unit_indices
    codes = W.zone_codes[idx]
    sizes = W.zone_sizes[codes]
    if np.any(sizes < 2):
        raise PanelError("points include singleton-zone units")

    def stat(values: np.ndarray) -> float:
        zone_sum = np.bincount(codes, weights=values, minlength=len(W.zone_labels))
        lag = (zone_sum[codes] - values) / (sizes - 1)
        c = values - values.mean()
        return float(c @ (lag - values.mean())) / float(c @ c)

    observed = stat(y)
    if permutations < 1:
        return MoranIResult(value=observed, band_lo=float("nan"),
                            band_hi=float("nan"), permutations=0)
    rng = np.random.default_rng(seed)
    draws = np.empty(permutations)
    for b in range(permutations):
        draws[b] = stat(rng.permutation(y))
    lo, hi = np.percentile(draws, [2.5, 97.5])
    return MoranIResult(value=observed, band_lo=float(lo), band_hi=float(hi),
                        permutations=permutations)


# ---------------------------------------------------------------------------
# Non-parametric Moran curve (local-linear regression of lag on own)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MoranCurve:
    """Fitted neighbour-average curve; its local slope is the local Moran's I."""

    x: np.ndarray
    fit: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    slope: np.ndarray
    slope_lo: np.ndarray
    slope_hi: np.ndarray
    bandwidth: float


def rule_of_thumb_bandwidth(values: np.ndarray) -> float:
    """Silverman-style plug-in bandwidth on one coordinate."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    std = values.std(ddof=1)
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) if q75 > q25 else std
    if spread <= 0:
        raise MoranError("cannot pick a bandwidth: values are constant")
    return 0.9 * spread * n ** (-0.2)


def _local_linear(x_eval: np.ndarray, x: np.ndarray, y: np.ndarray,
                  bandwidth: float) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-weighted local-linear fit and slope at each abscissa."""
    u = x[None, :] - x_eval[:, None]
    w = np.exp(-0.5 * (u / bandwidth) ** 2)
    s0 = w.sum(axis=1)
    s1 = (w * u).sum(axis=1)
    s2 = (w * u * u).sum(axis=1)
    t0 = (w * y).sum(axis=1)
    t1 = (w * u * y).sum(axis=1)
    den = s0 * s2 - s1 * s1
    scale = np.maximum(s0 * s0 * bandwidth * bandwidth, np.finfo(float).tiny)
    bad = den <= 1e-12 * scale
    den = np.where(bad, 1.0, den)
    fit = (s2 * t0 - s1 * t1) / den
    slope = (s0 * t1 - s1 * t0) / den
    fit[bad] = np.nan
    slope[bad] = np.nan
    return fit, slope


def moran_curve(points: MoranPointSet, n_eval: int = 100,
                bandwidth: float | None = None, replicates: int = 500,
                seed: int = 0) -> MoranCurve:
    """Local-linear regression of lag on own over equispaced abscissae.

    95% bands come from `replicates` pair-bootstrap refits; they are
    widened where necessary so they always bracket the point fit.
    """
    if len(points) < 30:
        raise MoranError(f"need at least 30 points, got {len(points)}")
    x = points.own
    y = points.lag
    if np.ptp(x) <= 0:
        raise MoranError("degenerate abscissa range: own values are constant")
    bw = rule_of_thumb_bandwidth(x) if bandwidth is None else float(bandwidth)
    x_eval = np.linspace(x.min(), x.max(), n_eval)
    fit, slope = _local_linear(x_eval, x, y, bw)

    if replicates < 1:
        nans = np.full(n_eval, np.nan)
        return MoranCurve(x=x_eval, fit=fit, lo=nans, hi=nans.copy(),
                          slope=slope, slope_lo=nans.copy(),
                          slope_hi=nans.copy(), bandwidth=bw)
    rng = np.random.default_rng(seed)
    n = len(points)
    boot_fit = np.empty((replicates, n_eval))
    boot_slope = np.empty((replicates, n_eval))
    for b in range(replicates):
        idx = rng.integers(0, n, n)
        boot_fit[b], boot_slope[b] = _local_linear(x_eval, x[idx], y[idx], bw)
    with np.errstate(invalid="ignore"):
        lo, hi = np.nanpercentile(boot_fit, [2.5, 97.5], axis=0)
        slo, shi = np.nanpercentile(boot_slope, [2.5, 97.5], axis=0)
    lo = np.fmin(lo, fit)
    hi = np.fmax(hi, fit)
    slo = np.fmin(slo, slope)
    shi = np.fmax(shi, slope)
    return MoranCurve(x=x_eval, fit=fit, lo=lo, hi=hi,
                      slope=slope, slope_lo=slo, slope_hi=shi, bandwidth=bw)


# ---------------------------------------------------------------------------
# Dispersion and variance decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DispersionStats:
    cv: float
    var_between_share: float
    var_within_share: float
    mean_density: float
    degenerate: bool = False


def dispersion_stats(panel: Panel, year: int,
                     partition: ZonePartition | None = None) -> DispersionStats:
    """Coefficient of variation of density and the between/within variance
    decomposition of log density across zones.

    CV is on density levels (persons per km^2), the decomposition on log
    density, both with population (ddof=0) variances so that
    between + within = total exactly. A constant panel is flagged
    degenerate with both shares reported as 0.
    """
    part = partition or panel.partition_for(year)
    density = panel.population_at(year) / panel.area_km2
    mean_density = float(density.mean())
    cv = float(density.std(ddof=0) / mean_density) if mean_density > 0 else 0.0

    y = panel.log_density_at(year)
    zones = np.asarray([part.zone(u) for u in panel.units], dtype=object)
    _, codes = np.unique(zones, return_inverse=True)
    total = float(y.var(ddof=0))
    if total <= 0.0:
        return DispersionStats(cv=cv, var_between_share=0.0, var_within_share=0.0,
                               mean_density=mean_density, degenerate=True)
    counts = np.bincount(codes)
    zone_mean = np.bincount(codes, weights=y) / counts
    between = float(np.sum(counts * (zone_mean - y.mean()) ** 2) / len(y))
    within = float(np.sum((y - zone_mean[codes]) ** 2) / len(y))
    return DispersionStats(cv=cv, var_between_share=between / total,
                           var_within_share=within / total,
                           mean_density=mean_density, degenerate=False)


# ---------------------------------------------------------------------------
# CSV exports
# ---------------------------------------------------------------------------

def write_moran_points_csv(points: MoranPointSet, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["unit_id", "year", "own", "lag", "population"])
        for i, unit in enumerate(points.unit_ids):
            writer.writerow([unit, points.year, fmt_float(points.own[i]),
                             fmt_float(points.lag[i]), int(points.population[i])])


def write_curve_csv(curve: MoranCurve, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "fit", "lo", "hi"])
        for i in range(len(curve.x)):
            writer.writerow([fmt_float(curve.x[i]), fmt_float(curve.fit[i]),
                             fmt_float(curve.lo[i]), fmt_float(curve.hi[i])])
