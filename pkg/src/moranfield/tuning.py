"""Smoothing parameter selection by one-interval forecast error.

For every (alpha, h) pair on a log-spaced grid, the field is estimated
from the observed transitions, each start point is advanced by one
observation interval along the interpolated flow, and the mean squared
distance between predicted and observed end points is recorded:

    MSE(alpha, h) = (1 / N) * sum_j |zhat_j(t0 + tau) - z_j(t0 + tau)|^2

Candidates whose field cannot be used (no supported node, or too many
trajectories stalling in unsupported cells) are excluded with an
explanatory status. Ties prefer the smaller h, then the smaller alpha.
An optional holdout fraction scores each candidate on transitions kept
out of the fit instead of in-sample.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .field import EstimationError, EvalGrid, estimate_rvf
from .flow import FieldInterpolator, integrate_many
from .kde import EPANECHNIKOV, KdeError, KernelSpec
from .moran import TransitionSet
from ._util import fmt_float, thread_count

H_GRID_DEFAULT = (0.04, 0.06, 0.08, 0.11, 0.15, 0.21, 0.29, 0.41, 0.57, 0.80)
ALPHA_GRID_DEFAULT = (0.0, 0.0005, 0.0012, 0.0028, 0.0067, 0.0158,
                      0.0375, 0.0889, 0.2108, 0.5)

STATUS_OK = "ok"
STATUS_EMPTY = "empty_field"
STATUS_STALLED = "stalled"
STATUS_DEGENERATE = "degenerate"


class TuningError(ValueError):
    """No usable candidate on the whole grid."""


@dataclass(frozen=True)
class TuneCandidate:
    alpha: float
    h: float
    mse: float
    status: str


@dataclass(frozen=True)
class TuneResult:
    candidates: list[TuneCandidate]
    best_alpha: float
    best_h: float
    best_mse: float


def _score_one(transitions: TransitionSet, fit: TransitionSet, eval_starts: np.ndarray,
               eval_ends: np.ndarray, alpha: float, h: float, grid: EvalGrid,
               step: float, stall_limit: float, min_mass: float,
               kernel: KernelSpec, pilot_mean: str) -> TuneCandidate:
    try:
        field = estimate_rvf(fit, h, alpha, grid, kernel=kernel, pilot_mean=pilot_mean)
    except KdeError:
        return TuneCandidate(alpha, h, float("nan"), STATUS_DEGENERATE)
    except EstimationError:
        return TuneCandidate(alpha, h, float("nan"), STATUS_EMPTY)
    interp = FieldInterpolator(field, min_mass=min_mass)
    res = integrate_many(interp, eval_starts, transitions.tau, step=step)
    stalled_share = float(np.mean(res.stalled))
    if stalled_share > stall_limit:
        return TuneCandidate(alpha, h, float("nan"), STATUS_STALLED)
    err = res.terminal - eval_ends
    mse = float(np.mean(np.sum(err * err, axis=1)))
    return TuneCandidate(alpha, h, mse, STATUS_OK)


def tune(transitions: TransitionSet, grid: EvalGrid,
         h_grid=H_GRID_DEFAULT, alpha_grid=ALPHA_GRID_DEFAULT,
         step: float = 0.1, stall_limit: float = 0.1, min_mass: float = 0.0,
         holdout_fraction: float = 0.0, seed: int = 0,
         kernel: KernelSpec = EPANECHNIKOV,
         pilot_mean: str = "geometric") -> TuneResult:
    """Grid search over (alpha, h); returns all candidates plus the best."""
    if not 0.0 <= holdout_fraction < 1.0:
        raise TuningError(f"holdout_fraction must be in [0, 1), got {holdout_fraction}")
    n = len(transitions.starts)
    if holdout_fraction > 0.0:
        n_hold = int(round(holdout_fraction * n))
        if n_hold < 1 or n - n_hold < 3:
            raise TuningError(f"holdout_fraction {holdout_fraction} leaves too few "
                              f"transitions out of {n}")
        rng = np.random.default_rng(seed)
        perm = rng.permutation(n)
        hold, keep = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
        fit = TransitionSet(
            unit_ids=tuple(transitions.unit_ids[i] for i in keep),
            starts=transitions.starts[keep],
            deltas=transitions.deltas[keep], tau=transitions.tau,
            t0=transitions.t0, t1=transitions.t1)
        eval_starts = transitions.starts[hold]
        eval_ends = transitions.ends[hold]
    else:
        fit = transitions
        eval_starts = transitions.starts
        eval_ends = transitions.ends

    combos = [(alpha, h) for alpha in alpha_grid for h in h_grid]
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        candidates = list(pool.map(
            lambda ah: _score_one(transitions, fit, eval_starts, eval_ends,
                                  ah[0], ah[1], grid, step, stall_limit,
                                  min_mass, kernel, pilot_mean),
            combos))

    usable = [c for c in candidates if c.status == STATUS_OK]
    if not usable:
        raise TuningError("no usable (alpha, h) candidate: all fields empty, "
                          "degenerate, or stalled")
    best = min(usable, key=lambda c: (c.mse, c.h, c.alpha))
    return TuneResult(candidates=candidates, best_alpha=best.alpha,
                      best_h=best.h, best_mse=best.mse)


def write_tune_csv(path, result: TuneResult) -> None:
    """All candidates in grid order, blank mse for excluded ones."""
    with open(path, "w", newline="") as fh:
        fh.write("alpha,h,mse,status\n")
        for c in result.candidates:
            fh.write(f"{fmt_float(c.alpha)},{fmt_float(c.h)},"
                     f"{fmt_float(c.mse)},{c.status}\n")
