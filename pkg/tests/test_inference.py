"""Resampling inference: significance, attractors, basins, overlay."""

from __future__ import annotations

import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from moranfield import EvalGrid, TransitionSet, VectorFieldGrid
from moranfield.field import estimate_rvf
from moranfield.kde import adaptive_density
from moranfield.inference import (BootstrapEnsemble, InferenceError, annotate,
                                  basin_probabilities, bootstrap_fields,
                                  bootstrap_indices, direction_variance_grid,
                                  find_attractors, flag_significance,
                                  policy_overlay, report_dict,
                                  write_overlay_csv, write_report_json)


def zero_field(extent=5.0, n=8, tau=1.0):
    grid = EvalGrid(-extent, extent, -extent, extent, nx=n, ny=n)
    return VectorFieldGrid(grid=grid, arrows=np.zeros((n, n, 2)),
                           mass=np.ones((n, n)), tau=tau, h=0.5, alpha=0.0)


def ensemble_from(point_field, replicate_arrows, degenerate=None, seed=0):
    replicate_arrows = np.asarray(replicate_arrows, dtype=float)
    b = len(replicate_arrows)
    mass = np.where(np.isfinite(replicate_arrows[..., 0]), 1.0, 0.0)
    if degenerate is None:
        degenerate = np.zeros(b, dtype=bool)
    return BootstrapEnsemble(point_field=point_field, arrows=replicate_arrows,
                             mass=mass, degenerate=degenerate, seed=seed)


# ---------------------------------------------------------------------------
# Resample index draws
# ---------------------------------------------------------------------------

def test_bootstrap_indices_reproducible_and_prefix_stable():
    a = bootstrap_indices(7, 8, 40)
    b = bootstrap_indices(7, 8, 40)
    assert np.array_equal(a, b)
    assert a.shape == (8, 40)
    assert a.min() >= 0 and a.max() < 40
    # replicate b depends only on (seed, b): fewer replicates keep the prefix
    first5 = bootstrap_indices(7, 5, 40)
    assert np.array_equal(first5, a[:5])
    other = bootstrap_indices(8, 8, 40)
    assert not np.array_equal(other, a)
    empty = bootstrap_indices(7, 0, 40)
    assert empty.shape == (0, 40)


# ---------------------------------------------------------------------------
# Per-node significance and direction variance
# ---------------------------------------------------------------------------

def test_flag_significance_cases():
    rng = np.random.default_rng(0)
    b = 100
    field = zero_field(n=2)
    arrows = np.zeros((b, 2, 2, 2))
    # (0, 0): replicates tightly clustered far from zero
    arrows[:, 0, 0, :] = [1.0, 1.0] + rng.normal(0.0, 0.01, size=(b, 2))
    # (0, 1): replicates straddle zero
    arrows[:, 0, 1, :] = rng.normal(0.0, 1.0, size=(b, 2))
    # (1, 0): all replicates identical and nonzero; singular covariance
    # falls back to the percentile rectangle, which excludes the origin
    arrows[:, 1, 0, :] = [0.5, 0.5]
    # (1, 1): too few finite replicates, however extreme
    arrows[:, 1, 1, :] = np.nan
    arrows[:5, 1, 1, :] = [100.0, 100.0]
    ens = ensemble_from(field, arrows)
    sig = flag_significance(ens, min_replicates=20)
    assert sig.shape == (2, 2)
    assert sig[0, 0]
    assert not sig[0, 1]
    assert sig[1, 0]
    assert not sig[1, 1]


def test_flag_significance_rectangle_covering_zero_is_not_significant():
    field = zero_field(n=2)
    arrows = np.zeros((50, 2, 2, 2))  # identical zero arrows everywhere
    ens = ensemble_from(field, arrows)
    sig = flag_significance(ens, min_replicates=20)
    assert not sig.any()


def test_flag_significance_requires_effective_support():
    # A node fed by a single transition reproduces that transition in
    # every resample that contains it: the replicate arrows are identical
    # and nonzero, exactly like the legitimate constant-ensemble case,
    # but the node's effective support is 1 so it must stay untested.
    rng = np.random.default_rng(11)
    n = 60
    starts = np.vstack([rng.normal(0.0, 0.3, size=(n, 2)), [[5.0, 5.0]]])
    deltas = np.vstack([
        [1.0, 0.0] + rng.normal(0.0, 0.05, size=(n, 2)),
        [[2.0, 2.0]],
    ])
    ts = TransitionSet(unit_ids=tuple(f"u{i}" for i in range(n + 1)),
                       starts=starts, deltas=deltas, tau=1.0)
    grid = EvalGrid(-0.3, 5.0, -0.3, 5.0, nx=12, ny=12)
    ens = bootstrap_fields(ts, 1.0, 0.0, grid, replicates=80, seed=4)
    sig = flag_significance(ens)
    support = ens.point_field.support
    lone = support == 1.0
    assert lone.any()
    assert not sig[lone].any()
    dense = support >= 20.0
    assert dense.any()
    assert sig[dense].all()


def test_estimate_rvf_support_counts_effective_transitions():
    rng = np.random.default_rng(5)
    starts = rng.normal(0.0, 1.0, size=(40, 2))
    deltas = rng.normal(0.0, 0.2, size=(40, 2))
    ts = TransitionSet(unit_ids=tuple(f"u{i}" for i in range(40)),
                       starts=starts, deltas=deltas, tau=1.0)
    grid = EvalGrid(-1.5, 1.5, -1.5, 1.5, nx=7, ny=7)
    field = estimate_rvf(ts, 0.6, 0.2, grid)
    dens = adaptive_density(starts, 0.6, 0.2)
    for k, z in enumerate(grid.nodes()):
        iy, ix = divmod(k, grid.nx)
        idx, w = dens.weights_at(z)
        if len(idx) == 0:
            assert field.support[iy, ix] == 0.0
        else:
            assert field.support[iy, ix] == pytest.approx(
                1.0 / np.sum(w ** 2), rel=1e-9)
    # hand-built fields claim unlimited support where mass is positive
    blank = zero_field(n=2)
    assert np.all(np.isinf(blank.support[blank.mass > 0.0]))


def test_direction_variance_grid():
    field = zero_field(n=2)
    b = 40
    arrows = np.zeros((b, 2, 2, 2))
    arrows[:, 0, 0, :] = [2.0, 0.0]                     # identical direction
    arrows[:, 0, 1, :] = [1.0, 0.0]
    arrows[1::2, 0, 1, :] = [-1.0, 0.0]                 # antipodal half/half
    arrows[:, 1, 0, :] = np.nan                         # unsupported
    arrows[0, 1, 0, :] = [1.0, 0.0]                     # single replicate
    rng = np.random.default_rng(1)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=b)
    arrows[:, 1, 1, 0] = np.cos(theta)                  # scattered
    arrows[:, 1, 1, 1] = np.sin(theta)
    ens = ensemble_from(field, arrows)
    dv = direction_variance_grid(ens, min_replicates=2)
    assert dv[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert dv[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert np.isnan(dv[1, 0])
    assert 0.5 < dv[1, 1] <= 1.0


def test_annotate_fills_field_layers():
    field = zero_field(n=2)
    arrows = np.tile([1.0, 1.0], (30, 2, 2, 1))
    arrows += np.random.default_rng(2).normal(0.0, 0.01, arrows.shape)
    ens = ensemble_from(field, arrows)
    out = annotate(field, ens, min_replicates=10)
    assert out is field
    assert field.significant.all()
    assert np.all(field.dirvar < 0.1)


# ---------------------------------------------------------------------------
# Ensemble estimation on real transitions
# ---------------------------------------------------------------------------

def test_bootstrap_fields_shapes_and_reproducibility():
    rng = np.random.default_rng(3)
    n = 50
    starts = rng.uniform(-1.0, 1.0, size=(n, 2))
    deltas = np.tile([0.2, 0.0], (n, 1)) + rng.normal(0.0, 0.05, size=(n, 2))
    ts = TransitionSet(unit_ids=tuple(f"u{i}" for i in range(n)),
                       starts=starts, deltas=deltas, tau=1.0)
    grid = EvalGrid(-2.0, 2.0, -2.0, 2.0, nx=6, ny=6)
    e1 = bootstrap_fields(ts, h=0.8, alpha=0.1, grid=grid, replicates=6, seed=5)
    assert e1.arrows.shape == (6, 6, 6, 2)
    assert e1.mass.shape == (6, 6, 6)
    assert not e1.degenerate.any()
    e2 = bootstrap_fields(ts, h=0.8, alpha=0.1, grid=grid, replicates=6, seed=5)
    assert np.array_equal(e1.arrows, e2.arrows, equal_nan=True)
    # replicate b depends only on (seed, b)
    e3 = bootstrap_fields(ts, h=0.8, alpha=0.1, grid=grid, replicates=3, seed=5)
    assert np.array_equal(e3.arrows, e1.arrows[:3], equal_nan=True)
    rep = e1.replicate_field(2)
    assert np.array_equal(rep.arrows, e1.arrows[2], equal_nan=True)
    assert rep.tau == ts.tau


def test_bootstrap_fields_tolerates_degenerate_resamples():
    # three base points: any resample with a repeated point is collinear
    starts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    ts = TransitionSet(unit_ids=("a", "b", "c"), starts=starts,
                       deltas=np.tile([0.1, 0.1], (3, 1)), tau=1.0)
    grid = EvalGrid(-1.0, 2.0, -1.0, 2.0, nx=5, ny=5)
    ens = bootstrap_fields(ts, h=1.0, alpha=0.0, grid=grid, replicates=30,
                           seed=11)
    assert ens.degenerate.any()
    assert not ens.degenerate.all()
    assert np.all(np.isnan(ens.arrows[ens.degenerate]))
    assert np.all(ens.mass[ens.degenerate] == 0.0)


# ---------------------------------------------------------------------------
# Attractors of an analytic two-basin flow
# ---------------------------------------------------------------------------

def two_basin_field(extent=2.2, n=45, tau=1.0):
    grid = EvalGrid(-extent, extent, -extent, extent, nx=n, ny=n)
    nodes = grid.nodes()
    rate = np.column_stack([nodes[:, 0] - nodes[:, 0] ** 3, -nodes[:, 1]])
    return VectorFieldGrid(grid=grid, arrows=(tau * rate).reshape(n, n, 2),
                           mass=np.ones((n, n)), tau=tau, h=0.5, alpha=0.0)


def test_find_attractors_recovers_two_sinks():
    field = two_basin_field()
    rng = np.random.default_rng(4)
    right = rng.uniform([0.2, -1.8], [2.0, 1.8], size=(12, 2))
    left = rng.uniform([-2.0, -1.8], [-0.2, 1.8], size=(6, 2))
    starts = np.vstack([right, left])
    att = find_attractors(field, starts, horizon=80.0, step=0.05,
                          early_stop=1e-7, merge_radius=0.5, min_share=0.05)
    assert len(att) == 2
    assert att[0].label == "urban" and att[1].label == "suburban"
    assert np.allclose(att[0].center, [1.0, 0.0], atol=0.05)
    assert np.allclose(att[1].center, [-1.0, 0.0], atol=0.05)
    assert att[0].n_units == 12 and att[1].n_units == 6
    assert att[0].share == pytest.approx(12 / 18)
    assert (att[0].id, att[1].id) == (1, 2)


def test_find_attractors_min_share_filters_stragglers():
    field = two_basin_field()
    rng = np.random.default_rng(5)
    right = rng.uniform([0.2, -1.8], [2.0, 1.8], size=(19, 2))
    left = np.array([[-1.0, 0.5]])
    att = find_attractors(field, np.vstack([right, left]), horizon=80.0,
                          step=0.05, early_stop=1e-7, min_share=0.25)
    assert len(att) == 1
    assert np.allclose(att[0].center, [1.0, 0.0], atol=0.05)


def test_find_attractors_merge_radius_collapses_sinks():
    field = two_basin_field()
    rng = np.random.default_rng(6)
    starts = np.vstack([
        rng.uniform([0.2, -1.0], [2.0, 1.0], size=(10, 2)),
        rng.uniform([-2.0, -1.0], [-0.2, 1.0], size=(10, 2)),
    ])
    att = find_attractors(field, starts, horizon=80.0, step=0.05,
                          early_stop=1e-7, merge_radius=3.0, min_share=0.05)
    assert len(att) == 1
    assert att[0].n_units == 20


def test_find_attractors_radius_floor_on_point_cluster():
    field = zero_field()
    starts = np.tile([0.5, 0.5], (10, 1))
    att = find_attractors(field, starts, horizon=5.0, step=0.1,
                          early_stop=1e-6, radius_floor=1e-3)
    assert len(att) == 1
    assert att[0].radius == 1e-3
    assert att[0].n_units == 10


# ---------------------------------------------------------------------------
# Basin probabilities and policy overlay on a hand-built ensemble
# ---------------------------------------------------------------------------

def basin_fixture():
    field = zero_field()
    starts = np.array([[1.0, 1.0], [1.1, 1.0], [1.0, 1.1],
                       [-1.0, -1.0], [-1.1, -1.0], [4.0, 4.0]])
    unit_ids = [f"m{i}" for i in range(6)]
    populations = np.array([100, 200, 300, 50, 50, 300])
    att = find_attractors(field, starts, horizon=5.0, step=0.1,
                          early_stop=1e-6, merge_radius=0.3, min_share=0.2)
    b = 5
    arrows = np.tile(field.arrows, (b, 1, 1, 1))
    degenerate = np.zeros(b, dtype=bool)
    degenerate[3] = True
    arrows[3] = np.nan
    ens = ensemble_from(field, arrows, degenerate=degenerate, seed=9)
    report = basin_probabilities(ens, att, starts, unit_ids, populations,
                                 horizon=5.0, step=0.1, early_stop=1e-6,
                                 assign_factor=1.5)
    return att, report


def test_basin_probabilities_deterministic_ensemble():
    att, report = basin_fixture()
    assert len(att) == 2
    assert att[0].label == "urban"          # cluster around (1, 1)
    assert att[0].center[0] > 0 > att[1].center[0]
    assert report.replicates == 5
    assert report.effective_replicates == 4
    assert list(report.assigned) == [0, 0, 0, 1, 1, -1]
    total = report.probabilities.sum(axis=1) + report.unresolved_probability
    assert np.allclose(total, 1.0)
    assert np.allclose(report.probabilities[:3, 0], 1.0)
    assert np.allclose(report.probabilities[3:5, 1], 1.0)
    assert report.unresolved_probability[5] == 1.0
    mun = report.municipality_shares
    assert mun[0].share == pytest.approx(3 / 6)
    assert mun[1].share == pytest.approx(2 / 6)
    assert report.unresolved_municipality.share == pytest.approx(1 / 6)
    # identical replicates pin the bands to the share
    assert mun[0].lo == mun[0].hi == pytest.approx(3 / 6)
    pop = report.population_shares
    assert pop[0].share == pytest.approx(600 / 1000)
    assert pop[1].share == pytest.approx(100 / 1000)
    assert report.unresolved_population.share == pytest.approx(300 / 1000)


def test_basin_probabilities_validation():
    field = zero_field()
    starts = np.array([[0.0, 0.0], [1.0, 1.0]])
    arrows = np.tile(field.arrows, (3, 1, 1, 1))
    ens = ensemble_from(field, arrows)
    with pytest.raises(InferenceError, match="align"):
        basin_probabilities(ens, [], starts, ["a"], [1, 2])
    all_bad = ensemble_from(field, np.full_like(arrows, np.nan),
                            degenerate=np.ones(3, dtype=bool))
    with pytest.raises(InferenceError, match="degenerate"):
        basin_probabilities(all_bad, [], starts, ["a", "b"], [1, 2])


def test_policy_overlay_crosstab(tmp_path):
    att, report = basin_fixture()
    flags = {"m0": True, "m3": True, "zzz": True}
    table = policy_overlay(report, flags)
    assert table.unknown_ids == ["zzz"]
    assert table.missing_ids == ["m1", "m2", "m4", "m5"]
    by_key = {(r.attractor, r.program_flag): r for r in table.rows}
    assert len(table.rows) == 6
    assert by_key[("urban", True)].n_units == 1
    assert by_key[("urban", True)].population == 100
    assert by_key[("urban", False)].n_units == 2
    assert by_key[("urban", False)].population == 500
    assert by_key[("suburban", True)].n_units == 1
    assert by_key[("suburban", False)].n_units == 1
    assert by_key[("unresolved", False)].n_units == 1
    assert by_key[("unresolved", True)].n_units == 0
    total_units = sum(r.n_units for r in table.rows)
    assert total_units == 6
    out = tmp_path / "overlay.csv"
    write_overlay_csv(out, table)
    lines = out.read_text().splitlines()
    assert lines[0] == "attractor,program_flag,n_units,population"
    assert len(lines) == 7
    assert lines[1].split(",")[0] == "urban"


def test_report_dict_matches_packaged_schema(tmp_path):
    att, report = basin_fixture()
    payload = report_dict(report, window=(1984, 2019), tau=1.0, h=0.5,
                          alpha=0.1)
    schema = json.loads(
        (resources.files("moranfield") / "schemas" / "report-v1.json")
        .read_text())
    jsonschema.validate(payload, schema)
    assert payload["schema_version"] == "report-v1"
    assert payload["window"] == {"start": 1984, "end": 2019}
    assert payload["n_units"] == 6
    assert payload["bootstrap"] == {"replicates": 5, "effective": 4, "seed": 9}
    assert [a["label"] for a in payload["attractors"]] == ["urban", "suburban"]
    unit0 = payload["units"][0]
    assert unit0["assigned"] == "urban"
    assert unit0["probabilities"]["urban"] == 1.0
    assert unit0["probabilities"]["unresolved"] == 0.0
    out = tmp_path / "report.json"
    write_report_json(out, payload)
    text = out.read_text()
    assert text.endswith("\n")
    assert json.loads(text) == payload
    write_report_json(tmp_path / "again.json", payload)
    assert (tmp_path / "again.json").read_text() == text
