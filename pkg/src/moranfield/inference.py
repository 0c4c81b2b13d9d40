"""Resampling inference on the estimated field and its long-run behavior.

Transitions are resampled with replacement; each replicate re-estimates
the whole field (pilot density, local factors, arrows) on the same grid.
Replicate draws come from independent child seeds spawned from one root
seed, so replicate b is reproducible regardless of execution order or
thread count.

Downstream of the ensemble:

* per-node significance: an arrow is significant when enough replicates
  support the node and the replicate mean displacement lies outside the
  chi-square(2) 95% acceptance region around zero (Mahalanobis test),
  falling back to a componentwise percentile rectangle when the replicate
  covariance is singular;
* per-node direction variance: circular spread of replicate arrows;
* attractors: long-run terminal points of the point-estimate flow,
  deduplicated and single-linkage clustered, each cluster summarized by
  its medoid and a 95th-percentile radius;
* basin probabilities: share of replicates whose flow carries each unit
  into each attractor, with aggregate municipality and population shares
  and 90% percentile bands;
* policy overlay: cross-tabulation of point-estimate basin membership
  against a binary program flag.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .field import EstimationError, EvalGrid, VectorFieldGrid, estimate_rvf
from .flow import FieldInterpolator, integrate_many
from .kde import EPANECHNIKOV, KdeError, KernelSpec
from .moran import TransitionSet
from ._util import thread_count

CHI2_2_95 = 5.991464547107979
DEFAULT_LABELS = ("urban", "suburban", "rural")


class InferenceError(ValueError):
    """Resampling produced nothing usable."""


def bootstrap_indices(seed: int, replicates: int, n: int) -> np.ndarray:
    """Resample index matrix (replicates, n); row b depends only on
    (seed, b), never on how many other rows are drawn or in what order."""
    children = np.random.SeedSequence(seed).spawn(replicates)
    return np.stack([
        np.random.default_rng(children[b]).integers(0, n, size=n)
        for b in range(replicates)
    ]) if replicates else np.empty((0, n), dtype=np.int64)


@dataclass(frozen=True)
class BootstrapEnsemble:
    """Point estimate plus replicate fields on a shared grid."""

    point_field: VectorFieldGrid
    arrows: np.ndarray       # (B, ny, nx, 2), NaN at unsupported nodes
    mass: np.ndarray         # (B, ny, nx)
    degenerate: np.ndarray   # (B,) replicates whose resample was unusable
    seed: int

    @property
    def replicates(self) -> int:
        return len(self.arrows)

    @property
    def grid(self) -> EvalGrid:
        return self.point_field.grid

    def replicate_field(self, b: int) -> VectorFieldGrid:
        return VectorFieldGrid(
            grid=self.grid, arrows=self.arrows[b], mass=self.mass[b],
            tau=self.point_field.tau, h=self.point_field.h,
            alpha=self.point_field.alpha)


def bootstrap_fields(transitions: TransitionSet, h: float, alpha: float,
                     grid: EvalGrid, replicates: int = 500, seed: int = 0,
                     kernel: KernelSpec = EPANECHNIKOV,
                     pilot_mean: str = "geometric") -> BootstrapEnsemble:
    """Estimate the point field and `replicates` resampled fields.

    A resample whose start points are collinear (or that supports no
    grid node at all) is tolerated: it is flagged degenerate and carries
    an all-NaN field.
    """
    point_field = estimate_rvf(transitions, h, alpha, grid,
                               kernel=kernel, pilot_mean=pilot_mean)
    n = len(transitions.starts)
    idx = bootstrap_indices(seed, replicates, n)
    ny, nx = grid.ny, grid.nx
    arrows = np.full((replicates, ny, nx, 2), np.nan)
    mass = np.zeros((replicates, ny, nx))
    degenerate = np.zeros(replicates, dtype=bool)

    def run(b: int) -> None:
        rows = idx[b]
        resample = TransitionSet(
            unit_ids=tuple(transitions.unit_ids[i] for i in rows),
            starts=transitions.starts[rows],
            deltas=transitions.deltas[rows], tau=transitions.tau,
            t0=transitions.t0, t1=transitions.t1)
        try:
            f = estimate_rvf(resample, h, alpha, grid,
                             kernel=kernel, pilot_mean=pilot_mean)
        except (KdeError, EstimationError):
            degenerate[b] = True
            return
        arrows[b] = f.arrows
        mass[b] = f.mass

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        list(pool.map(run, range(replicates)))
    return BootstrapEnsemble(point_field=point_field, arrows=arrows,
                             mass=mass, degenerate=degenerate, seed=seed)


def flag_significance(ensemble: BootstrapEnsemble,
                      min_replicates: int = 20) -> np.ndarray:
    """Boolean (ny, nx) grid of significantly nonzero mean displacements.

    A node is tested only when it carries at least `min_replicates`
    effective replicates: the count of finite replicate arrows, capped by
    the effective number of independent transitions feeding the node
    (`point_field.support`).  A node propped up by one or two transitions
    stays untested regardless of how many replicates contain it, which is
    what keeps the test calibrated: resampling barely moves the arrow at
    such nodes, so the replicate covariance wildly understates the real
    sampling noise.
    """
    _, ny, nx, _ = ensemble.arrows.shape
    keep = ~ensemble.degenerate
    ax = ensemble.arrows[keep][..., 0].reshape(-1, ny * nx)
    ay = ensemble.arrows[keep][..., 1].reshape(-1, ny * nx)
    finite = np.isfinite(ax) & np.isfinite(ay)
    cnt = finite.sum(axis=0)

    with np.errstate(invalid="ignore", divide="ignore"):
        effective = np.minimum(cnt, ensemble.point_field.support.reshape(-1))
        enough = effective >= max(min_replicates, 2)

        safe = np.maximum(cnt, 1)
        mx = np.where(finite, ax, 0.0).sum(axis=0) / safe
        my = np.where(finite, ay, 0.0).sum(axis=0) / safe
        dx = np.where(finite, ax - mx, 0.0)
        dy = np.where(finite, ay - my, 0.0)
        dof = np.maximum(cnt - 1, 1)
        sxx = (dx * dx).sum(axis=0) / dof
        syy = (dy * dy).sum(axis=0) / dof
        sxy = (dx * dy).sum(axis=0) / dof
        det = sxx * syy - sxy * sxy
        trace = sxx + syy
        # Rank test, not just relative determinant: a covariance whose
        # small eigenvalue is numerical dust must not reach the quadratic
        # form, where it would blow the statistic up along the thin axis.
        well = det > 1e-9 * trace * trace + 1e-300
        stat = np.where(well,
                        (mx * mx * syy - 2.0 * mx * my * sxy + my * my * sxx)
                        / np.where(well, det, 1.0),
                        0.0)
    significant = enough & well & (stat > CHI2_2_95)

    fallback = enough & ~well
    if np.any(fallback):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lox, hix = np.nanpercentile(np.where(finite, ax, np.nan),
                                        [2.5, 97.5], axis=0)
            loy, hiy = np.nanpercentile(np.where(finite, ay, np.nan),
                                        [2.5, 97.5], axis=0)
        covers_zero = (lox <= 0.0) & (0.0 <= hix) & (loy <= 0.0) & (0.0 <= hiy)
        significant |= fallback & ~covers_zero
    return significant.reshape(ny, nx)


def direction_variance_grid(ensemble: BootstrapEnsemble,
                            min_replicates: int = 2) -> np.ndarray:
    """Per-node circular spread of replicate arrow directions, NaN where
    fewer than `min_replicates` replicates carry a directed arrow."""
    b, ny, nx, _ = ensemble.arrows.shape
    ax = ensemble.arrows[..., 0].reshape(b, -1)
    ay = ensemble.arrows[..., 1].reshape(b, -1)
    norm = np.hypot(ax, ay)
    directed = np.isfinite(norm) & (norm > 0.0)
    cnt = directed.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(directed, ax / norm, 0.0).sum(axis=0)
        uy = np.where(directed, ay / norm, 0.0).sum(axis=0)
        out = 1.0 - np.hypot(ux, uy) / np.maximum(cnt, 1)
    out[cnt < max(min_replicates, 1)] = np.nan
    return out.reshape(ny, nx)


def annotate(field: VectorFieldGrid, ensemble: BootstrapEnsemble,
             min_replicates: int = 20) -> VectorFieldGrid:
    """Fill the field's dirvar and significant layers from the ensemble."""
    field.significant = flag_significance(ensemble, min_replicates=min_replicates)
    field.dirvar = direction_variance_grid(ensemble)
    return field


@dataclass(frozen=True)
class Attractor:
    id: int
    label: str
    center: np.ndarray
    radius: float
    n_units: int
    share: float


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n)

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _medoid(points: np.ndarray, weights: np.ndarray) -> int:
    """Index minimizing the weighted sum of distances to all points;
    first index wins ties (points arrive lexicographically sorted)."""
    n = len(points)
    best_cost, best = np.inf, 0
    chunk = max(1, int(2e7) // max(n, 1))
    for s in range(0, n, chunk):
        block = points[s:s + chunk]
        d = np.sqrt(((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1))
        costs = d @ weights
        k = int(np.argmin(costs))
        if costs[k] < best_cost:
            best_cost, best = float(costs[k]), s + k
    return best


def _weighted_percentile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    cutoff = (q / 100.0) * cum[-1]
    k = min(int(np.searchsorted(cum, cutoff, side="left")), len(values) - 1)
    return float(values[order][k])


def _cluster_geometry(reps: np.ndarray, counts: np.ndarray, members: np.ndarray,
                      radius_floor: float) -> tuple[np.ndarray, float]:
    pts = reps[members]
    wts = counts[members].astype(float)
    center = pts[_medoid(pts, wts)]
    d = np.sqrt(((pts - center) ** 2).sum(axis=1))
    radius = max(_weighted_percentile(d, wts, 95.0), radius_floor)
    return center, radius


def find_attractors(field: VectorFieldGrid, starts: np.ndarray,
                    horizon: float = 500.0, step: float = 0.1,
                    early_stop: float = 1e-6, merge_radius: float = 0.5,
                    min_share: float = 0.01, labels=DEFAULT_LABELS,
                    min_mass: float = 0.0,
                    radius_floor: float = 1e-3) -> list[Attractor]:
    """Long-run destinations of the point-estimate flow.

    Terminal points are deduplicated to 1e-3, linked into clusters at
    `merge_radius` (single linkage), and clusters holding at least
    `min_share` of the units become attractors. Attractors whose circles
    still overlap are merged until disjoint, then ordered by descending
    center density and labeled.
    """
    starts = np.asarray(starts, dtype=float)
    interp = FieldInterpolator(field, min_mass=min_mass)
    res = integrate_many(interp, starts, horizon, step=step, early_stop=early_stop)
    n = len(starts)
    reps, counts = np.unique(np.round(res.terminal, 3), axis=0, return_counts=True)

    uf = _UnionFind(len(reps))
    if len(reps) > 1:
        pairs = cKDTree(reps).query_pairs(merge_radius, output_type="ndarray")
        for a, b in pairs:
            uf.union(int(a), int(b))
    roots = np.array([uf.find(i) for i in range(len(reps))])

    clusters: list[np.ndarray] = []
    for root in np.unique(roots):
        members = np.flatnonzero(roots == root)
        if counts[members].sum() >= min_share * n:
            clusters.append(members)
    if not clusters:
        return []

    geometry = [_cluster_geometry(reps, counts, m, radius_floor) for m in clusters]
    merged = True
    while merged and len(clusters) > 1:
        merged = False
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                (ci, ri), (cj, rj) = geometry[i], geometry[j]
                if float(np.hypot(*(ci - cj))) <= ri + rj:
                    clusters[i] = np.union1d(clusters[i], clusters[j])
                    del clusters[j], geometry[j]
                    geometry[i] = _cluster_geometry(reps, counts, clusters[i],
                                                    radius_floor)
                    merged = True
                    break
            if merged:
                break

    order = sorted(range(len(clusters)),
                   key=lambda k: (-geometry[k][0][0], -geometry[k][0][1]))
    attractors = []
    for rank, k in enumerate(order):
        center, radius = geometry[k]
        n_units = int(counts[clusters[k]].sum())
        label = labels[rank] if rank < len(labels) else f"attractor-{rank + 1}"
        attractors.append(Attractor(id=rank + 1, label=label, center=center,
                                    radius=radius, n_units=n_units,
                                    share=n_units / n))
    return attractors


def _assign(terminals: np.ndarray, attractors: list[Attractor],
            factor: float) -> np.ndarray:
    """Nearest attractor index within factor * radius, else -1."""
    if not attractors:
        return np.full(len(terminals), -1, dtype=np.int64)
    centers = np.stack([a.center for a in attractors])
    radii = np.array([a.radius for a in attractors])
    d = np.sqrt(((terminals[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1))
    nearest = np.argmin(d, axis=1)
    within = d[np.arange(len(terminals)), nearest] <= radii[nearest] * factor
    return np.where(within, nearest, -1)


@dataclass(frozen=True)
class ShareBand:
    share: float
    lo: float
    hi: float


@dataclass(frozen=True)
class BasinReport:
    """Point-estimate basin membership and its bootstrap distribution.

    `assigned` holds the attractor index per unit (-1 unresolved) under
    the point-estimate field; `probabilities[i, k]` is the share of
    effective replicates sending unit i into attractor k.
    """

    attractors: list[Attractor]
    unit_ids: list[str]
    populations: np.ndarray
    assigned: np.ndarray
    probabilities: np.ndarray
    unresolved_probability: np.ndarray
    municipality_shares: list[ShareBand]
    population_shares: list[ShareBand]
    unresolved_municipality: ShareBand
    unresolved_population: ShareBand
    replicates: int
    effective_replicates: int
    seed: int


def basin_probabilities(ensemble: BootstrapEnsemble, attractors: list[Attractor],
                        starts: np.ndarray, unit_ids, populations,
                        horizon: float = 500.0, step: float = 0.1,
                        early_stop: float = 1e-6, assign_factor: float = 1.5,
                        min_mass: float = 0.0) -> BasinReport:
    """Bootstrap distribution of long-run basin membership per unit."""
    starts = np.asarray(starts, dtype=float)
    unit_ids = [str(u) for u in unit_ids]
    populations = np.asarray(populations, dtype=np.int64)
    n = len(starts)
    if not (len(unit_ids) == n and len(populations) == n):
        raise InferenceError("starts, unit_ids and populations must align")
    k = len(attractors)
    b = ensemble.replicates
    effective = np.flatnonzero(~ensemble.degenerate)
    if len(effective) == 0:
        raise InferenceError("every bootstrap replicate was degenerate")

    point_interp = FieldInterpolator(ensemble.point_field, min_mass=min_mass)
    point_res = integrate_many(point_interp, starts, horizon, step=step,
                               early_stop=early_stop)
    assigned0 = _assign(point_res.terminal, attractors, assign_factor)

    assigned = np.full((b, n), -1, dtype=np.int64)

    def run(bi: int) -> None:
        interp = FieldInterpolator(ensemble.replicate_field(bi), min_mass=min_mass)
        res = integrate_many(interp, starts, horizon, step=step,
                             early_stop=early_stop)
        assigned[bi] = _assign(res.terminal, attractors, assign_factor)

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        list(pool.map(run, effective.tolist()))

    eff = assigned[effective]
    probabilities = np.zeros((n, k))
    for a in range(k):
        probabilities[:, a] = (eff == a).mean(axis=0)
    unresolved_probability = (eff == -1).mean(axis=0)

    pop_total = float(populations.sum())

    def share_bands(index: int) -> tuple[ShareBand, ShareBand]:
        mun_reps = (eff == index).mean(axis=1)
        pop_reps = ((eff == index) * populations[None, :]).sum(axis=1) / pop_total
        mun = ShareBand(share=float(np.mean(assigned0 == index)),
                        lo=float(np.percentile(mun_reps, 5)),
                        hi=float(np.percentile(mun_reps, 95)))
        pop = ShareBand(share=float(populations[assigned0 == index].sum() / pop_total),
                        lo=float(np.percentile(pop_reps, 5)),
                        hi=float(np.percentile(pop_reps, 95)))
        return mun, pop

    mun_shares, pop_shares = [], []
    for a in range(k):
        mun, pop = share_bands(a)
        mun_shares.append(mun)
        pop_shares.append(pop)
    un_mun, un_pop = share_bands(-1)

    return BasinReport(
        attractors=attractors, unit_ids=unit_ids, populations=populations,
        assigned=assigned0, probabilities=probabilities,
        unresolved_probability=unresolved_probability,
        municipality_shares=mun_shares, population_shares=pop_shares,
        unresolved_municipality=un_mun, unresolved_population=un_pop,
        replicates=b, effective_replicates=len(effective), seed=ensemble.seed)


@dataclass(frozen=True)
class OverlayRow:
    attractor: str
    program_flag: bool
    n_units: int
    population: int


@dataclass(frozen=True)
class OverlayTable:
    rows: list[OverlayRow]
    unknown_ids: list[str]
    missing_ids: list[str]


def policy_overlay(report: BasinReport, program_flags: dict[str, bool]) -> OverlayTable:
    """Cross-tabulate point-estimate basin membership with a binary
    program flag.

    Flag ids not present in the report are returned as unknown; report
    units without a flag are returned as missing and counted unflagged.
    """
    known = set(report.unit_ids)
    unknown = sorted(u for u in program_flags if u not in known)
    missing = [u for u in report.unit_ids if u not in program_flags]
    labels = [a.label for a in report.attractors] + ["unresolved"]
    rows = []
    for idx, label in enumerate(labels):
        code = idx if idx < len(report.attractors) else -1
        in_basin = report.assigned == code
        for flag in (False, True):
            mask = in_basin & np.array([
                bool(program_flags.get(u, False)) == flag for u in report.unit_ids])
            rows.append(OverlayRow(
                attractor=label, program_flag=flag,
                n_units=int(mask.sum()),
                population=int(report.populations[mask].sum())))
    return OverlayTable(rows=rows, unknown_ids=unknown, missing_ids=missing)


def write_overlay_csv(path, table: OverlayTable) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("attractor,program_flag,n_units,population\n")
        for row in table.rows:
            fh.write(f"{row.attractor},{1 if row.program_flag else 0},"
                     f"{row.n_units},{row.population}\n")


def report_dict(report: BasinReport, window: tuple[int, int], tau: float,
                h: float, alpha: float) -> dict:
    """JSON-ready summary matching the packaged report-v1 schema."""
    def band(sb: ShareBand) -> dict:
        return {"share": sb.share, "lo": sb.lo, "hi": sb.hi}

    labels = [a.label for a in report.attractors]
    units = []
    for i, uid in enumerate(report.unit_ids):
        probs = {lab: float(report.probabilities[i, k])
                 for k, lab in enumerate(labels)}
        probs["unresolved"] = float(report.unresolved_probability[i])
        code = int(report.assigned[i])
        units.append({
            "unit_id": uid,
            "assigned": labels[code] if code >= 0 else "unresolved",
            "probabilities": probs,
        })
    return {
        "schema_version": "report-v1",
        "window": {"start": int(window[0]), "end": int(window[1])},
        "tau": float(tau),
        "h": float(h),
        "alpha": float(alpha),
        "n_units": len(report.unit_ids),
        "bootstrap": {
            "replicates": int(report.replicates),
            "effective": int(report.effective_replicates),
            "seed": int(report.seed),
        },
        "attractors": [
            {
                "id": a.id,
                "label": a.label,
                "center": [float(a.center[0]), float(a.center[1])],
                "radius": float(a.radius),
                "n_units": a.n_units,
                "share": a.share,
            }
            for a in report.attractors
        ],
        "basins": {
            "municipality_shares": dict(
                [(lab, band(sb)) for lab, sb in zip(labels, report.municipality_shares)]
                + [("unresolved", band(report.unresolved_municipality))]),
            "population_shares": dict(
                [(lab, band(sb)) for lab, sb in zip(labels, report.population_shares)]
                + [("unresolved", band(report.unresolved_population))]),
        },
        "units": units,
    }


def write_report_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")
