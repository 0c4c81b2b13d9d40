"""Bivariate kernel density estimation with full sample covariance and
locally adaptive bandwidths.

Three stages, each exposed on its own:

1. Pilot estimate with a fixed bandwidth h and the sample covariance S:

       pilot(z) = det(S)^(-1/2) / (N h^2) * sum_j k( m_j(z) / h^2 )

   where m_j(z) = (z - z_j)^T S^(-1) (z - z_j) and k is a radial kernel
   profile applied to the squared Mahalanobis distance, k(z^T z) = K(z).

2. Local bandwidth factors from the pilot values at the sample points:

       lambda_j = ( pilot(z_j) / g )^(-alpha)

   with g the geometric mean of the pilot values and alpha in [0, 1) the
   sensitivity to local density (alpha = 0: no adaptation).

3. Adaptive estimate with per-point bandwidths h * lambda_j:

       f(z) = det(S)^(-1/2) / N * sum_j k( m_j(z) / (h lambda_j)^2 ) / (h lambda_j)^2

The default profile is the Epanechnikov kernel, K(z) = (2/pi)(1 - |z|^2)
on |z| <= 1, whose compact support makes far samples contribute exactly
zero; evaluation exploits that through a KD-tree over whitened points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial import cKDTree


class KdeError(ValueError):
    """Degenerate sample or invalid smoothing parameters."""


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel profile over the squared scaled distance.

    `profile(u)` must integrate to 1 over the plane as K(z) = profile(|z|^2)
    and vanish for u > support_radius^2.
    """

    name: str
    profile: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    at_zero: float


def _epanechnikov_profile(u: np.ndarray) -> np.ndarray:
    return (2.0 / math.pi) * np.maximum(0.0, 1.0 - u)


EPANECHNIKOV = KernelSpec(
    name="epanechnikov",
    profile=_epanechnikov_profile,
    support_radius=1.0,
    at_zero=2.0 / math.pi,
)


class _WhitenedCloud:
    """Sample points in Mahalanobis (whitened) coordinates with a KD-tree.

    Whitening by the Cholesky factor of S turns the scaled squared
    Mahalanobis distance into a plain squared Euclidean one, so compact
    kernel support becomes a ball query.
    """

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2:
            raise KdeError(f"expected (N, 2) sample, got {points.shape}")
        if len(points) < 3:
            raise KdeError(f"need at least 3 sample points, got {len(points)}")
        self.points = points
        S = np.cov(points, rowvar=False, ddof=1)
        scale = S[0, 0] * S[1, 1]
        if not np.linalg.det(S) > 1e-12 * scale:
            raise KdeError("sample covariance is singular (collinear sample)")
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise KdeError("sample covariance is singular (collinear sample)") from None
        self.S = S
        self._L = L
        self.sqrt_det_S = float(L[0, 0] * L[1, 1])
        self.white = self.whiten(points)
        self.tree = cKDTree(self.white)

    def whiten(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return solve_triangular(self._L, z.T, lower=True).T

    def __len__(self) -> int:
        return len(self.points)


def _lambda_buckets(lam: np.ndarray) -> list[np.ndarray]:
    """Group sample indices into bands of similar lambda (factor sqrt(2))."""
    order = np.argsort(lam, kind="stable")
    buckets: list[np.ndarray] = []
    start = 0
    while start < len(order):
        lo = lam[order[start]]
        stop = start
        while stop < len(order) and lam[order[stop]] <= lo * math.sqrt(2.0):
            stop += 1
        buckets.append(order[start:stop])
        start = stop
    return buckets


def _accumulate(cloud: _WhitenedCloud, queries_white: np.ndarray, h: float,
                lam: np.ndarray, kernel: KernelSpec,
                values: np.ndarray | None = None,
                squares: bool = False,
                ) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Per-query sums of kernel terms  k(d^2/(h lam_j)^2) / (h lam_j)^2.

    When `values` is given, also accumulates the value-weighted sums
    (one row of `values` per sample point).  When `squares` is set, also
    accumulates the sums of squared terms, from which the effective
    number of contributing samples per query follows as sum^2/sum_sq.
    """
    m = len(queries_white)
    dens = np.zeros(m)
    vals = np.zeros((m, values.shape[1])) if values is not None else None
    sq = np.zeros(m) if squares else None
    qtree = cKDTree(queries_white)
    for idx in _lambda_buckets(lam):
        r_max = h * kernel.support_radius * lam[idx].max()
        subtree = cKDTree(cloud.white[idx])
        pairs = subtree.sparse_distance_matrix(qtree, r_max, output_type="ndarray")
        if len(pairs) == 0:
            continue
        j = idx[pairs["i"]]
        q = pairs["j"]
        width2 = (h * lam[j]) ** 2
        w = kernel.profile(pairs["v"] ** 2 / width2) / width2
        dens += np.bincount(q, weights=w, minlength=m)
        if values is not None:
            for c in range(values.shape[1]):
                vals[:, c] += np.bincount(q, weights=w * values[j, c], minlength=m)
        if squares:
            sq += np.bincount(q, weights=w * w, minlength=m)
    return dens, vals, sq


def _as_queries(z: np.ndarray) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return z[None, :], True
    return z, False


class PilotDensity:
    """Fixed-bandwidth full-covariance density evaluator."""

    def __init__(self, cloud: _WhitenedCloud, h: float, kernel: KernelSpec = EPANECHNIKOV):
        if h <= 0:
            raise KdeError(f"bandwidth must be positive, got {h}")
        self.cloud = cloud
        self.h = float(h)
        self.kernel = kernel
        self._ones = np.ones(len(cloud))

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    @property
    def S(self) -> np.ndarray:
        return self.cloud.S

    def __call__(self, z: np.ndarray) -> np.ndarray | float:
        q, single = _as_queries(z)
        dens, _, _ = _accumulate(self.cloud, self.cloud.whiten(q), self.h,
                                 self._ones, self.kernel)
        out = dens / (len(self.cloud) * self.cloud.sqrt_det_S)
        return float(out[0]) if single else out

    def at_samples(self) -> np.ndarray:
        return self(self.cloud.points)


def pilot_density(points: np.ndarray, h: float,
                  kernel: KernelSpec = EPANECHNIKOV) -> PilotDensity:
    """Pilot estimator over the sample, callable at arbitrary points."""
    return PilotDensity(_WhitenedCloud(points), h, kernel)


def local_factors(pilot_values: np.ndarray, alpha: float,
                  pilot_mean: str = "geometric") -> tuple[np.ndarray, float]:
    """Local bandwidth factors lambda_j and the normalizer g.

    `pilot_mean` selects how g aggregates the pilot values: "geometric"
    (exp of the mean log, the default) or "literal" (exp of the plain
    mean, for sensitivity analysis).
    """
    values = np.asarray(pilot_values, dtype=float)
    if not 0.0 <= alpha < 1.0:
        raise KdeError(f"alpha must be in [0, 1), got {alpha}")
    if np.any(values <= 0.0):
        raise KdeError("pilot density is zero at a sample point")
    if pilot_mean == "geometric":
        g = float(np.exp(np.mean(np.log(values))))
    elif pilot_mean == "literal":
        g = float(np.exp(np.mean(values)))
    else:
        raise KdeError(f"unknown pilot_mean {pilot_mean!r}")
    lam = (values / g) ** (-alpha)
    return lam, g


class AdaptiveDensity:
    """Adaptive full-covariance density evaluator.

    Carries the pieces the vector-field estimator reuses: the whitened
    sample, global bandwidth h, sensitivity alpha, per-point factors
    lambda_j and the normalizer g.
    """

    def __init__(self, cloud: _WhitenedCloud, h: float, alpha: float,
                 lambdas: np.ndarray, g: float, kernel: KernelSpec = EPANECHNIKOV):
        self.cloud = cloud
        self.h = float(h)
        self.alpha = float(alpha)
        self.lambdas = lambdas
        self.g = g
        self.kernel = kernel

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    @property
    def S(self) -> np.ndarray:
        return self.cloud.S

    def kernel_terms(self, z: np.ndarray,
                     values: np.ndarray | None = None,
                     squares: bool = False,
                     ) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
        """Raw per-query term sums (plus value-weighted and squared-term
        sums on request) before the det(S)^(-1/2)/N normalization."""
        q, _ = _as_queries(z)
        return _accumulate(self.cloud, self.cloud.whiten(q), self.h,
                           self.lambdas, self.kernel, values=values,
                           squares=squares)

    def __call__(self, z: np.ndarray) -> np.ndarray | float:
        q, single = _as_queries(z)
        dens, _, _ = self.kernel_terms(q)
        out = dens / (len(self.cloud) * self.cloud.sqrt_det_S)
        return float(out[0]) if single else out

    def weights_at(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Indices and normalized kernel weights of the samples contributing
        at one point; weights sum to 1 unless the point is unsupported."""
        z = np.asarray(z, dtype=float)
        u = self.cloud.whiten(z[None, :])[0]
        d2 = np.sum((self.cloud.white - u) ** 2, axis=1)
        width2 = (self.h * self.lambdas) ** 2
        terms = self.kernel.profile(d2 / width2) / width2
        idx = np.flatnonzero(terms > 0.0)
        total = terms[idx].sum()
        if total == 0.0:
            return idx, terms[idx]
        return idx, terms[idx] / total


def adaptive_density(points: np.ndarray, h: float, alpha: float,
                     kernel: KernelSpec = EPANECHNIKOV,
                     pilot_mean: str = "geometric") -> AdaptiveDensity:
    """Build the adaptive estimator: pilot, local factors, then evaluator."""
    cloud = _WhitenedCloud(points)
    pilot = PilotDensity(cloud, h, kernel)
    lam, g = local_factors(pilot.at_samples(), alpha, pilot_mean=pilot_mean)
    return AdaptiveDensity(cloud, h, alpha, lam, g, kernel)
