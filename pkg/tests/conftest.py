"""Shared fixtures and independent reference implementations.

Every naive_* helper recomputes a statistic with plain loops straight
from its definition, sharing no machinery with the library code it
checks. The two-basin generator provides a synthetic dynamical system
whose flow has a closed form, so forecast errors can be measured against
exact truth.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from moranfield import TransitionSet


# ---------------------------------------------------------------------------
# Reference implementations: spatial weights and Moran statistics
# ---------------------------------------------------------------------------

def naive_lag(values, zones):
    """Leave-one-out zone mean per unit; NaN for singleton zones."""
    values = np.asarray(values, dtype=float)
    out = np.full(len(values), np.nan)
    for i, zi in enumerate(zones):
        others = [values[j] for j, zj in enumerate(zones) if zj == zi and j != i]
        if others:
            out[i] = sum(others) / len(others)
    return out


def naive_morans_i(values, zones):
    """Global Moran's I over non-singleton units with leave-one-out lag."""
    values = np.asarray(values, dtype=float)
    lag = naive_lag(values, zones)
    keep = [i for i in range(len(values)) if not math.isnan(lag[i])]
    y = values[keep]
    ybar = y.mean()
    num = sum((values[i] - ybar) * (lag[i] - ybar) for i in keep)
    den = sum((values[i] - ybar) ** 2 for i in keep)
    return num / den


def naive_variance_decomposition(values, zones):
    """(between share, within share) of the ddof=0 variance across zones."""
    values = np.asarray(values, dtype=float)
    mean = values.mean()
    zone_means = {}
    for z in set(zones):
        members = [values[i] for i, zi in enumerate(zones) if zi == z]
        zone_means[z] = sum(members) / len(members)
    between = sum((zone_means[z] - mean) ** 2 for z in zones) / len(values)
    within = sum((values[i] - zone_means[zones[i]]) ** 2
                 for i in range(len(values))) / len(values)
    total = values.var(ddof=0)
    return between / total, within / total


# ---------------------------------------------------------------------------
# Reference implementations: kernel density and the transition field
# ---------------------------------------------------------------------------

def _profile(u):
    return (2.0 / math.pi) * max(0.0, 1.0 - u)


def naive_pilot(points, h, queries):
    """Fixed-bandwidth full-covariance density, plain double loop."""
    points = np.asarray(points, dtype=float)
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    S = np.cov(points, rowvar=False, ddof=1)
    S_inv = np.linalg.inv(S)
    norm = len(points) * h * h * math.sqrt(np.linalg.det(S))
    out = np.zeros(len(queries))
    for qi, z in enumerate(queries):
        acc = 0.0
        for zj in points:
            d = z - zj
            m = float(d @ S_inv @ d)
            acc += _profile(m / (h * h))
        out[qi] = acc / norm
    return out


def naive_local_factors(points, h, alpha, pilot_mean="geometric"):
    pilots = naive_pilot(points, h, points)
    if pilot_mean == "geometric":
        g = math.exp(np.mean(np.log(pilots)))
    else:
        g = math.exp(np.mean(pilots))
    return (pilots / g) ** (-alpha), g


def naive_adaptive(points, h, alpha, queries, pilot_mean="geometric"):
    """Locally adaptive density, plain double loop."""
    points = np.asarray(points, dtype=float)
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    lam, _ = naive_local_factors(points, h, alpha, pilot_mean)
    S = np.cov(points, rowvar=False, ddof=1)
    S_inv = np.linalg.inv(S)
    det_factor = math.sqrt(np.linalg.det(S)) * len(points)
    out = np.zeros(len(queries))
    for qi, z in enumerate(queries):
        acc = 0.0
        for j, zj in enumerate(points):
            d = z - zj
            m = float(d @ S_inv @ d)
            w2 = (h * lam[j]) ** 2
            acc += _profile(m / w2) / w2
        out[qi] = acc / det_factor
    return out


def naive_field(starts, deltas, h, alpha, nodes, pilot_mean="geometric"):
    """Kernel-weighted mean displacement and mass at each node."""
    starts = np.asarray(starts, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    lam, _ = naive_local_factors(starts, h, alpha, pilot_mean)
    S = np.cov(starts, rowvar=False, ddof=1)
    S_inv = np.linalg.inv(S)
    arrows = np.full((len(nodes), 2), np.nan)
    mass = np.zeros(len(nodes))
    for qi, z in enumerate(nodes):
        terms = np.zeros(len(starts))
        for j, zj in enumerate(starts):
            d = z - zj
            m = float(d @ S_inv @ d)
            w2 = (h * lam[j]) ** 2
            terms[j] = _profile(m / w2) / w2
        tsum = terms.sum()
        mass[qi] = h * h * tsum / (2.0 / math.pi)
        if tsum > 0.0:
            arrows[qi, 0] = float(terms @ deltas[:, 0]) / tsum
            arrows[qi, 1] = float(terms @ deltas[:, 1]) / tsum
    return arrows, mass


def naive_bilinear_rate(field, z):
    """Bilinear interpolation of arrows/tau with per-corner validity."""
    xs, ys = field.grid.xs, field.grid.ys
    x = min(max(z[0], xs[0]), xs[-1])
    y = min(max(z[1], ys[0]), ys[-1])
    ix = min(int((x - xs[0]) / (xs[1] - xs[0])), len(xs) - 2)
    iy = min(int((y - ys[0]) / (ys[1] - ys[0])), len(ys) - 2)
    fx = (x - xs[ix]) / (xs[1] - xs[0])
    fy = (y - ys[iy]) / (ys[1] - ys[0])
    fx = min(max(fx, 0.0), 1.0)
    fy = min(max(fy, 0.0), 1.0)
    corners = [(iy, ix, (1 - fx) * (1 - fy)), (iy, ix + 1, fx * (1 - fy)),
               (iy + 1, ix, (1 - fx) * fy), (iy + 1, ix + 1, fx * fy)]
    num = np.zeros(2)
    wsum = 0.0
    for cy, cx, w in corners:
        a = field.arrows[cy, cx]
        if np.all(np.isfinite(a)):
            num += w * a
            wsum += w
    if wsum == 0.0:
        return np.zeros(2), True
    return num / wsum / field.tau, False


def rk4_reference(f, z0, horizon, step):
    """Textbook fixed-step RK4 without compensation, for cross-checks."""
    z = np.array(z0, dtype=float)
    n = int(round(horizon / step))
    for _ in range(n):
        k1 = f(z)
        k2 = f(z + 0.5 * step * k1)
        k3 = f(z + 0.5 * step * k2)
        k4 = f(z + step * k3)
        z = z + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return z


# ---------------------------------------------------------------------------
# Two-basin synthetic system with closed-form flow
# ---------------------------------------------------------------------------

def two_basin_flow(z, t):
    """Exact time-t state of dx/dt = x - x^3, dy/dt = -y.

    The x equation separates: x(t) = x0 e^t / sqrt(1 + x0^2 (e^{2t} - 1)).
    Sinks at (-1, 0) and (1, 0); the y axis is the basin boundary.
    """
    z = np.asarray(z, dtype=float)
    et = math.exp(t)
    x0 = z[..., 0]
    x = x0 * et / np.sqrt(1.0 + x0 * x0 * (et * et - 1.0))
    y = z[..., 1] * math.exp(-t)
    return np.stack([x, y], axis=-1)


def two_basin_transitions(n, sigma, seed, tau=1.0, box=2.2):
    """Sampled transitions of the two-basin system plus noise.

    Returns (TransitionSet, truth) where truth(z) is the exact noise-free
    displacement over one tau starting from z.
    """
    rng = np.random.default_rng(seed)
    starts = rng.uniform(-box, box, size=(n, 2))
    ends = two_basin_flow(starts, tau) + rng.normal(0.0, sigma, size=(n, 2))
    deltas = ends - starts
    ts = TransitionSet(unit_ids=tuple(f"s{i:04d}" for i in range(n)),
                       starts=starts, deltas=deltas, tau=tau)

    def truth(z):
        z = np.asarray(z, dtype=float)
        return two_basin_flow(z, tau) - z

    return ts, truth


def angular_errors(estimated, true):
    """Absolute angle in degrees between paired 2-vectors."""
    est = np.atleast_2d(estimated)
    tru = np.atleast_2d(true)
    dot = np.sum(est * tru, axis=1)
    cross = est[:, 0] * tru[:, 1] - est[:, 1] * tru[:, 0]
    return np.degrees(np.abs(np.arctan2(cross, dot)))


# ---------------------------------------------------------------------------
# CLI fixtures
# ---------------------------------------------------------------------------

@pytest.fixture
def demo_config(tmp_path):
    """Write a small-budget TOML config against the packaged demo data.

    Returns a factory: call it with extra TOML lines to append.
    """
    from moranfield.datasets import demo_paths

    paths = demo_paths()

    def make(extra="", name="config.toml"):
        out = tmp_path / "out"
        text = (
            "[inputs]\n"
            f'panel = "{paths["panel"]}"\n'
            f'partitions = "{paths["partitions"]}"\n'
            f'crosswalk = "{paths["crosswalk"]}"\n'
            f'program = "{paths["program"]}"\n'
            "\n[window]\nstart = 1984\nend = 2019\n"
            "\n[estimator]\nh = 0.6\nalpha = 0.3\n"
            "\n[bootstrap]\nreplicates = 8\nseed = 7\nmin_replicates = 4\n"
            "\n[flow]\nhorizon = 6.0\nrecord_stride = 20\n"
            "\n[attractors]\nhorizon = 80.0\nearly_stop = 1e-4\n"
            f'\n[output]\ndir = "{out}"\n'
            + extra
        )
        path = tmp_path / name
        path.write_text(text)
        return path, out

    return make
