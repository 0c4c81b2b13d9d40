"""Smoothing parameter selection by one-interval forecast error."""

from __future__ import annotations

import numpy as np
import pytest

from moranfield import EvalGrid, TransitionSet
from moranfield.tuning import (STATUS_DEGENERATE, STATUS_EMPTY, STATUS_OK,
                               STATUS_STALLED, TuningError, tune,
                               write_tune_csv)


def drift_transitions(seed, n=60, drift=(0.2, -0.1)):
    rng = np.random.default_rng(seed)
    starts = rng.uniform(-1.5, 1.5, size=(n, 2))
    deltas = np.tile(drift, (n, 1)) + rng.normal(0.0, 0.01, size=(n, 2))
    return TransitionSet(unit_ids=tuple(f"u{i:03d}" for i in range(n)),
                         starts=starts, deltas=deltas, tau=1.0)


def wide_grid():
    return EvalGrid(-3.0, 3.0, -3.0, 3.0, nx=25, ny=25)


def test_exact_ties_resolve_to_smallest_h_then_alpha():
    # Zero displacements give every supported candidate an exactly zero
    # error, so the tie-break order is fully exercised.
    n = 50
    rng = np.random.default_rng(0)
    starts = rng.uniform(-1.0, 1.0, size=(n, 2))
    ts = TransitionSet(unit_ids=tuple(f"u{i}" for i in range(n)),
                       starts=starts, deltas=np.zeros((n, 2)), tau=1.0)
    res = tune(ts, wide_grid(), h_grid=(0.8, 0.5), alpha_grid=(0.2, 0.0),
               step=0.05)
    ok = [c for c in res.candidates if c.status == STATUS_OK]
    assert len(ok) == 4
    assert all(c.mse == 0.0 for c in ok)
    assert res.best_h == 0.5
    assert res.best_alpha == 0.0


def test_single_candidate_grid():
    ts = drift_transitions(1)
    res = tune(ts, wide_grid(), h_grid=(0.6,), alpha_grid=(0.1,), step=0.05)
    assert len(res.candidates) == 1
    assert res.best_h == 0.6 and res.best_alpha == 0.1
    assert res.candidates[0].status == STATUS_OK
    assert res.best_mse == res.candidates[0].mse


def test_best_minimizes_mse_over_grid():
    ts = drift_transitions(2)
    res = tune(ts, wide_grid(), h_grid=(0.3, 0.6, 0.9),
               alpha_grid=(0.0, 0.3), step=0.05)
    ok = [c for c in res.candidates if c.status == STATUS_OK]
    assert ok
    assert res.best_mse == min(c.mse for c in ok)
    match = [c for c in ok if c.mse == res.best_mse]
    want = min(match, key=lambda c: (c.h, c.alpha))
    assert (res.best_alpha, res.best_h) == (want.alpha, want.h)


def test_tiny_bandwidth_candidates_are_excluded_not_fatal():
    ts = drift_transitions(3, n=40)
    res = tune(ts, wide_grid(), h_grid=(1e-6, 0.6), alpha_grid=(0.0,),
               step=0.05)
    by_h = {c.h: c for c in res.candidates}
    assert by_h[1e-6].status in {STATUS_EMPTY, STATUS_STALLED}
    assert np.isnan(by_h[1e-6].mse)
    assert by_h[0.6].status == STATUS_OK
    assert res.best_h == 0.6


def test_stalled_status_when_most_starts_lose_support():
    # Transitions live in two far-apart clusters; a bandwidth that only
    # covers each cluster core leaves boundary starts in dead cells.
    rng = np.random.default_rng(4)
    a = rng.normal(0.0, 0.05, size=(20, 2))
    b = rng.normal(0.0, 0.05, size=(20, 2)) + 30.0
    starts = np.vstack([a, b])
    deltas = np.tile([0.1, 0.0], (40, 1))
    ts = TransitionSet(unit_ids=tuple(f"u{i}" for i in range(40)),
                       starts=starts, deltas=deltas, tau=1.0)
    grid = EvalGrid(-2.0, 32.0, -2.0, 32.0, nx=12, ny=12)
    res = tune(ts, grid, h_grid=(0.02, 3.0), alpha_grid=(0.0,),
               step=0.05, stall_limit=0.0)
    statuses = {c.h: c.status for c in res.candidates}
    assert statuses[0.02] in {STATUS_STALLED, STATUS_EMPTY}
    assert statuses[3.0] == STATUS_OK


def test_degenerate_status_on_collinear_starts():
    n = 30
    x = np.linspace(-1.0, 1.0, n)
    starts = np.column_stack([x, 2.0 * x])  # exactly collinear
    ts = TransitionSet(unit_ids=tuple(f"u{i}" for i in range(n)),
                       starts=starts, deltas=np.tile([0.1, 0.1], (n, 1)),
                       tau=1.0)
    with pytest.raises(TuningError, match="no usable"):
        tune(ts, wide_grid(), h_grid=(0.5,), alpha_grid=(0.0,), step=0.05)
    # with one usable candidate alongside, the degenerate one is reported
    mixed = TransitionSet(
        unit_ids=ts.unit_ids + ("extra",),
        starts=np.vstack([starts, [[0.3, -0.9]]]),
        deltas=np.tile([0.1, 0.1], (n + 1, 1)), tau=1.0)
    res = tune(mixed, wide_grid(), h_grid=(0.8,), alpha_grid=(0.0,),
               step=0.05)
    assert res.candidates[0].status == STATUS_OK


def test_holdout_split_is_reproducible_and_validated():
    ts = drift_transitions(5, n=80)
    kwargs = dict(h_grid=(0.6,), alpha_grid=(0.1,), step=0.05,
                  holdout_fraction=0.25, seed=42)
    r1 = tune(ts, wide_grid(), **kwargs)
    r2 = tune(ts, wide_grid(), **kwargs)
    assert r1.candidates[0].mse == r2.candidates[0].mse
    r3 = tune(ts, wide_grid(), h_grid=(0.6,), alpha_grid=(0.1,), step=0.05,
              holdout_fraction=0.25, seed=43)
    assert r3.candidates[0].mse != r1.candidates[0].mse
    with pytest.raises(TuningError, match="holdout_fraction"):
        tune(ts, wide_grid(), holdout_fraction=1.0)
    small = drift_transitions(6, n=4)
    with pytest.raises(TuningError, match="too few"):
        tune(small, wide_grid(), holdout_fraction=0.5)


def test_write_tune_csv(tmp_path):
    ts = drift_transitions(7)
    res = tune(ts, wide_grid(), h_grid=(1e-6, 0.6), alpha_grid=(0.0, 0.2),
               step=0.05)
    path = tmp_path / "tune.csv"
    write_tune_csv(path, res)
    lines = path.read_text().splitlines()
    assert lines[0] == "alpha,h,mse,status"
    assert len(lines) == 1 + len(res.candidates)
    for line, cand in zip(lines[1:], res.candidates):
        cells = line.split(",")
        assert float(cells[0]) == cand.alpha
        assert float(cells[1]) == cand.h
        assert cells[3] == cand.status
        if cand.status == STATUS_OK:
            assert float(cells[2]) == cand.mse
        else:
            assert cells[2] == ""
