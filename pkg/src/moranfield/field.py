"""Kernel-weighted vector field estimation on a regular grid.

Each observed transition contributes its displacement delta_j to nearby
evaluation nodes, weighted by the same adaptive kernel terms that define
the density of transition start points. The estimated arrow at node z is
the kernel-weighted average of the displacements:

    arrow(z) = sum_j w_j(z) delta_j / sum_j w_j(z)

computed in a single normalization so a field built from identical
displacements reproduces them exactly. Nodes where every kernel term is
zero carry no information and hold NaN arrows with zero mass; `mass`
records kernel support in transition-equivalent units (an isolated
transition exactly at a node contributes 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .kde import EPANECHNIKOV, AdaptiveDensity, KernelSpec, adaptive_density
from .moran import TransitionSet
from ._util import fmt_float


class EstimationError(ValueError):
    """Field estimation could not produce a usable result."""


@dataclass(frozen=True)
class EvalGrid:
    """Regular evaluation grid over the Moran plane, row-major bottom-up."""

    x0: float
    x1: float
    y0: float
    y1: float
    nx: int = 50
    ny: int = 50

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise EstimationError(f"grid needs at least 2x2 nodes, got {self.nx}x{self.ny}")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise EstimationError("grid extent must have positive width and height")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y0, self.y1, self.ny)

    def nodes(self) -> np.ndarray:
        """All grid nodes as an (nx * ny, 2) array, x varying fastest."""
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    @staticmethod
    def covering(points: np.ndarray, h: float, S: np.ndarray,
                 nx: int = 50, ny: int = 50) -> "EvalGrid":
        """Bounding box of `points` expanded by one bandwidth per axis.

        The margin h * sqrt(S_ii) is the kernel reach along each axis for
        unit local factor, so boundary points keep their full support.
        """
        points = np.asarray(points, dtype=float)
        mx = h * float(np.sqrt(S[0, 0]))
        my = h * float(np.sqrt(S[1, 1]))
        return EvalGrid(
            x0=float(points[:, 0].min() - mx), x1=float(points[:, 0].max() + mx),
            y0=float(points[:, 1].min() - my), y1=float(points[:, 1].max() + my),
            nx=nx, ny=ny,
        )


@dataclass
class VectorFieldGrid:
    """Estimated field on a grid.

    arrows[iy, ix] is the displacement estimate at (xs[ix], ys[iy]) over
    one observation interval tau; NaN marks unsupported nodes. `support`
    counts the effective number of independent transitions behind each
    node (the inverse of the sum of squared normalized kernel weights).
    `dirvar` and `significant` start unset and are filled by resampling.
    """

    grid: EvalGrid
    arrows: np.ndarray
    mass: np.ndarray
    tau: float
    h: float
    alpha: float
    dirvar: np.ndarray = dataclass_field(default=None)
    significant: np.ndarray = dataclass_field(default=None)
    support: np.ndarray = dataclass_field(default=None)

    def __post_init__(self):
        if self.dirvar is None:
            self.dirvar = np.full((self.grid.ny, self.grid.nx), np.nan)
        if self.significant is None:
            self.significant = np.zeros((self.grid.ny, self.grid.nx), dtype=bool)
        if self.support is None:
            # Hand-built fields carry no resampling notion; treat every
            # populated node as backed by unlimited independent support.
            self.support = np.where(self.mass > 0.0, np.inf, 0.0)

    @property
    def empty(self) -> np.ndarray:
        return self.mass == 0.0

    def arrow_at(self, iy: int, ix: int) -> np.ndarray:
        return self.arrows[iy, ix]


def estimate_rvf(transitions: TransitionSet, h: float, alpha: float,
                 grid: EvalGrid, kernel: KernelSpec = EPANECHNIKOV,
                 pilot_mean: str = "geometric",
                 density: AdaptiveDensity | None = None) -> VectorFieldGrid:
    """Estimate the transition field on `grid`.

    A prebuilt `density` over the same start points may be passed to
    reuse the pilot stage (the bootstrap does this per replicate).
    """
    if len(transitions.starts) < 3:
        raise EstimationError(f"need at least 3 transitions, got {len(transitions.starts)}")
    if density is None:
        density = adaptive_density(transitions.starts, h, alpha, kernel, pilot_mean)
    terms, weighted, squares = density.kernel_terms(
        grid.nodes(), values=transitions.deltas, squares=True)
    if not np.any(terms > 0.0):
        raise EstimationError("every grid node is outside kernel support (h too small "
                              "or grid off the data)")
    arrows = np.full((len(terms), 2), np.nan)
    supported = terms > 0.0
    arrows[supported] = weighted[supported] / terms[supported, None]
    mass = density.h ** 2 * terms / density.kernel.at_zero
    support = np.zeros(len(terms))
    support[supported] = terms[supported] ** 2 / squares[supported]
    ny, nx = grid.ny, grid.nx
    return VectorFieldGrid(
        grid=grid,
        arrows=arrows.reshape(ny, nx, 2),
        mass=mass.reshape(ny, nx),
        tau=transitions.tau,
        h=density.h,
        alpha=density.alpha,
        support=support.reshape(ny, nx),
    )


def direction_variance(arrows: np.ndarray) -> float:
    """Circular spread of arrow directions: 1 - |mean unit vector|.

    0 means perfectly aligned replicate arrows, values near 1 mean no
    preferred direction. Zero-length arrows carry no direction and are
    dropped; an input with no directed arrow at all is an error.
    """
    arrows = np.asarray(arrows, dtype=float)
    arrows = arrows[np.all(np.isfinite(arrows), axis=1)]
    if len(arrows) < 2:
        raise EstimationError(f"need at least 2 finite arrows, got {len(arrows)}")
    norms = np.hypot(arrows[:, 0], arrows[:, 1])
    directed = norms > 0.0
    if not np.any(directed):
        raise EstimationError("all arrows have zero length, direction undefined")
    units = arrows[directed] / norms[directed, None]
    mx, my = units.mean(axis=0)
    return float(1.0 - np.hypot(mx, my))


def write_field_csv(path, field: VectorFieldGrid) -> None:
    """Write the field grid as CSV, one row per node, row-major bottom-up.

    Unsupported nodes keep their coordinates and zero mass but blank
    arrow components.
    """
    xs, ys = field.grid.xs, field.grid.ys
    with open(path, "w", newline="") as fh:
        fh.write("zx,zy,dx,dy,mass,dirvar,significant\n")
        for iy in range(field.grid.ny):
            for ix in range(field.grid.nx):
                dx, dy = field.arrows[iy, ix]
                fh.write(",".join([
                    fmt_float(xs[ix]),
                    fmt_float(ys[iy]),
                    fmt_float(dx),
                    fmt_float(dy),
                    fmt_float(field.mass[iy, ix]),
                    fmt_float(field.dirvar[iy, ix]),
                    "1" if field.significant[iy, ix] else "0",
                ]) + "\n")
