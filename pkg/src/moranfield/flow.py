"""Flow of the estimated field: interpolation and trajectory integration.

The grid field is turned into a rate everywhere inside its bounding box
by bilinear interpolation of the four surrounding node arrows divided by
the observation interval tau. Unsupported corner nodes are dropped and
the remaining corner weights renormalized; a cell whose four corners are
all unsupported yields a zero rate and marks the trajectory `stalled`.
Positions leaving the bounding box are clamped to it and the trajectory
is marked `clamped`.

Integration is classic fixed-step fourth-order Runge-Kutta. State and
time are advanced with compensated (Kahan) accumulation so that long
runs of tiny steps do not drift: integrating a constant unit-rate field
over an exact multiple of the step reproduces the arithmetic terminal to
the last bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import VectorFieldGrid
from ._util import fmt_float


class FlowError(ValueError):
    """Invalid integration request."""


class FieldInterpolator:
    """Bilinear rate evaluator over a VectorFieldGrid.

    `min_mass` treats nodes at or below that support mass as unsupported,
    on top of the estimator's own empty nodes.
    """

    def __init__(self, field: VectorFieldGrid, min_mass: float = 0.0):
        grid = field.grid
        arrows = np.array(field.arrows, dtype=float)
        arrows[~(field.mass > min_mass)] = np.nan
        self.grid = grid
        self.arrows = arrows
        self.valid = np.isfinite(arrows[:, :, 0]) & np.isfinite(arrows[:, :, 1])
        self.tau = float(field.tau)
        self._dx = (grid.x1 - grid.x0) / (grid.nx - 1)
        self._dy = (grid.y1 - grid.y0) / (grid.ny - 1)
        self._all_valid = bool(self.valid.all())

    def clamp(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Positions clipped to the bounding box and a moved mask."""
        g = self.grid
        cx = np.clip(z[:, 0], g.x0, g.x1)
        cy = np.clip(z[:, 1], g.y0, g.y1)
        moved = (cx != z[:, 0]) | (cy != z[:, 1])
        return np.column_stack([cx, cy]), moved

    def _rate_one(self, x: float, y: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Scalar shortcut for a single query on a fully supported grid.

        Every operation mirrors the vector path in `rate_at` so the two
        agree bitwise.
        """
        g = self.grid
        cx = g.x0 if x < g.x0 else (g.x1 if x > g.x1 else x)
        cy = g.y0 if y < g.y0 else (g.y1 if y > g.y1 else y)
        was_clamped = (cx != x) or (cy != y)
        ix = int((cx - g.x0) / self._dx)
        ix = 0 if ix < 0 else (g.nx - 2 if ix > g.nx - 2 else ix)
        iy = int((cy - g.y0) / self._dy)
        iy = 0 if iy < 0 else (g.ny - 2 if iy > g.ny - 2 else iy)
        fx = (cx - (g.x0 + ix * self._dx)) / self._dx
        fx = 0.0 if fx < 0.0 else (1.0 if fx > 1.0 else fx)
        fy = (cy - (g.y0 + iy * self._dy)) / self._dy
        fy = 0.0 if fy < 0.0 else (1.0 if fy > 1.0 else fy)
        w00 = (1.0 - fx) * (1.0 - fy)
        w01 = fx * (1.0 - fy)
        w10 = (1.0 - fx) * fy
        w11 = fx * fy
        a = self.arrows
        wsum = w00 + w01 + w10 + w11
        num_x = (w00 * a[iy, ix, 0] + w01 * a[iy, ix + 1, 0]
                 + w10 * a[iy + 1, ix, 0] + w11 * a[iy + 1, ix + 1, 0])
        num_y = (w00 * a[iy, ix, 1] + w01 * a[iy, ix + 1, 1]
                 + w10 * a[iy + 1, ix, 1] + w11 * a[iy + 1, ix + 1, 1])
        rates = np.array([[num_x / wsum / self.tau, num_y / wsum / self.tau]])
        return rates, np.array([was_clamped]), np.array([False])

    def rate_at(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rates at positions z (M, 2).

        Returns (rates (M, 2), clamped (M,), hole (M,)); rates are zero
        where `hole` is set.
        """
        g = self.grid
        z = np.asarray(z, dtype=float)
        if self._all_valid and z.shape == (1, 2):
            return self._rate_one(float(z[0, 0]), float(z[0, 1]))
        pos, clamped = self.clamp(z)
        ix = np.clip(((pos[:, 0] - g.x0) / self._dx).astype(np.int64), 0, g.nx - 2)
        iy = np.clip(((pos[:, 1] - g.y0) / self._dy).astype(np.int64), 0, g.ny - 2)
        fx = np.clip((pos[:, 0] - (g.x0 + ix * self._dx)) / self._dx, 0.0, 1.0)
        fy = np.clip((pos[:, 1] - (g.y0 + iy * self._dy)) / self._dy, 0.0, 1.0)
        corners = ((iy, ix, (1.0 - fx) * (1.0 - fy)),
                   (iy, ix + 1, fx * (1.0 - fy)),
                   (iy + 1, ix, (1.0 - fx) * fy),
                   (iy + 1, ix + 1, fx * fy))
        wsum = np.zeros(len(pos))
        num = np.zeros((len(pos), 2))
        # Accumulate numerator and weight sum in the same order so a
        # constant field interpolates to exactly that constant.
        for cy, cx, w in corners:
            ok = self.valid[cy, cx]
            wv = np.where(ok, w, 0.0)
            wsum += wv
            num += wv[:, None] * np.where(ok[:, None], self.arrows[cy, cx], 0.0)
        hole = wsum == 0.0
        rates = np.zeros((len(pos), 2))
        live = ~hole
        rates[live] = num[live] / wsum[live, None] / self.tau
        return rates, clamped, hole


@dataclass(frozen=True)
class IntegrationResult:
    """Batched trajectories; `path` is (K, N, 2) when recording was on."""

    times: np.ndarray | None
    path: np.ndarray | None
    terminal: np.ndarray
    clamped: np.ndarray
    stalled: np.ndarray
    converged: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    unit_id: str | None
    times: np.ndarray
    path: np.ndarray
    terminal: np.ndarray
    clamped: bool
    stalled: bool
    converged: bool


def _split_steps(horizon: float, step: float) -> tuple[int, float]:
    n_full = int(np.floor(horizon / step + 1e-9))
    remainder = horizon - n_full * step
    if remainder <= 1e-9 * max(1.0, abs(horizon)):
        remainder = 0.0
    return n_full, remainder


def integrate_many(interp: FieldInterpolator, z0: np.ndarray, horizon: float,
                   step: float = 0.1, record_stride: int | None = None,
                   early_stop: float | None = None) -> IntegrationResult:
    """Integrate trajectories from rows of z0 for `horizon` time units.

    `record_stride` keeps every stride-th step (plus start and end) in
    the returned path; `early_stop` freezes a trajectory once a step
    moves it less than that distance.
    """
    if step <= 0.0:
        raise FlowError(f"step must be positive, got {step}")
    if horizon < 0.0:
        raise FlowError(f"horizon must be nonnegative, got {horizon}")
    state = np.array(z0, dtype=float)
    if state.ndim != 2 or state.shape[1] != 2:
        raise FlowError(f"expected (N, 2) start positions, got {np.shape(z0)}")
    n = len(state)
    comp = np.zeros_like(state)
    clamped = np.zeros(n, dtype=bool)
    stalled = np.zeros(n, dtype=bool)
    converged = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)

    n_full, remainder = _split_steps(horizon, step)
    t_sum, t_comp = 0.0, 0.0
    times: list[float] = [0.0]
    path: list[np.ndarray] = [state.copy()]

    def advance(dt: float) -> None:
        nonlocal t_sum, t_comp
        idx = np.flatnonzero(active)
        if len(idx):
            z = state[idx]
            k1, c1, h1 = interp.rate_at(z)
            k2, c2, h2 = interp.rate_at(z + (0.5 * dt) * k1)
            k3, c3, h3 = interp.rate_at(z + (0.5 * dt) * k2)
            k4, c4, h4 = interp.rate_at(z + dt * k3)
            clamped[idx] |= c1 | c2 | c3 | c4
            stalled[idx] |= h1 | h2 | h3 | h4
            inc = dt * ((k1 + 2.0 * (k2 + k3) + k4) / 6.0)
            y = inc - comp[idx]
            t = z + y
            comp[idx] = (t - z) - y
            state[idx] = t
            out, moved = interp.clamp(state[idx])
            if np.any(moved):
                sub = idx[moved]
                state[sub] = out[moved]
                comp[sub] = 0.0
                clamped[sub] = True
            if early_stop is not None:
                done = np.hypot(inc[:, 0], inc[:, 1]) < early_stop
                converged[idx[done]] = True
                active[idx[done]] = False
        ty = dt - t_comp
        tt = t_sum + ty
        t_comp = (tt - t_sum) - ty
        t_sum = tt

    for i in range(1, n_full + 1):
        advance(step)
        if record_stride is not None and (i % record_stride == 0 or
                                          (i == n_full and remainder == 0.0)):
            times.append(t_sum)
            path.append(state.copy())
    if remainder > 0.0:
        advance(remainder)
        if record_stride is not None:
            times.append(t_sum)
            path.append(state.copy())

    if record_stride is None:
        out_times, out_path = None, None
    else:
        # Dedupe a final step that landed on a stride boundary.
        if len(times) >= 2 and times[-1] == times[-2]:
            times.pop()
            path.pop()
        out_times = np.asarray(times)
        out_path = np.stack(path, axis=0)
    return IntegrationResult(times=out_times, path=out_path, terminal=state,
                             clamped=clamped, stalled=stalled, converged=converged)


def integrate(field: VectorFieldGrid | FieldInterpolator, z0: np.ndarray,
              horizon: float, step: float = 0.1,
              record_stride: int | None = 1,
              early_stop: float | None = None) -> Trajectory:
    """Single-trajectory convenience wrapper around integrate_many."""
    interp = field if isinstance(field, FieldInterpolator) else FieldInterpolator(field)
    res = integrate_many(interp, np.asarray(z0, dtype=float)[None, :], horizon,
                         step=step, record_stride=record_stride, early_stop=early_stop)
    return Trajectory(
        unit_id=None,
        times=res.times,
        path=res.path[:, 0, :] if res.path is not None else None,
        terminal=res.terminal[0],
        clamped=bool(res.clamped[0]),
        stalled=bool(res.stalled[0]),
        converged=bool(res.converged[0]),
    )


def forecast_all(field: VectorFieldGrid, starts: np.ndarray, unit_ids,
                 horizon: float, step: float = 0.1, record_stride: int = 1,
                 min_mass: float = 0.0) -> tuple[list[Trajectory], IntegrationResult]:
    """Integrate one trajectory per unit and wrap them individually."""
    unit_ids = list(unit_ids)
    starts = np.asarray(starts, dtype=float)
    if len(unit_ids) != len(starts):
        raise FlowError(f"{len(unit_ids)} unit ids for {len(starts)} start positions")
    interp = FieldInterpolator(field, min_mass=min_mass)
    res = integrate_many(interp, starts, horizon, step=step, record_stride=record_stride)
    trajectories = [
        Trajectory(unit_id=uid, times=res.times, path=res.path[:, i, :],
                   terminal=res.terminal[i], clamped=bool(res.clamped[i]),
                   stalled=bool(res.stalled[i]), converged=bool(res.converged[i]))
        for i, uid in enumerate(unit_ids)
    ]
    return trajectories, res


def write_trajectories_csv(path, trajectories: list[Trajectory]) -> None:
    """One row per unit per recorded time, units in input order."""
    with open(path, "w", newline="") as fh:
        fh.write("unit_id,t,zx,zy\n")
        for traj in trajectories:
            for t, (zx, zy) in zip(traj.times, traj.path):
                fh.write(f"{traj.unit_id},{fmt_float(t)},{fmt_float(zx)},{fmt_float(zy)}\n")
