"""Command-line front-end.

Five subcommands drive the full pipeline and emit every tabular, JSON
and SVG artifact into the configured output directory:

    describe               per-year dispersion and spatial-correlation stats
    estimate               field estimation + bootstrap annotation + plots
    tune                   (alpha, h) grid search by forecast MSE
    forecast               trajectories, attractors, basin report, overlay
    diag-partition-switch  one-year field across a zone-definition change

Every command takes `--config PATH` plus the overrides --h, --alpha,
--B, --seed, --grid NxM, --window Y1:Y2 and --out DIR. Runs are
reproducible: the same config and seed produce byte-identical CSV/JSON
artifacts (SVG identical too, with coordinates at 6 significant digits).
Exit code 0 means no hard error; recoverable oddities are collected in
`diagnostics.json` next to the other artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .field import (EstimationError, EvalGrid, VectorFieldGrid, write_field_csv)
from .flow import FlowError, forecast_all, write_trajectories_csv
from .inference import (InferenceError, annotate, basin_probabilities,
                        bootstrap_fields, find_attractors, policy_overlay,
                        report_dict, write_overlay_csv, write_report_json)
from .kde import KdeError
from .moran import (MoranError, build_weights, dispersion_stats, moran_curve,
                    morans_i, to_moran, transitions, write_curve_csv,
                    write_moran_points_csv)
from .panel import (PanelError, dropped_units_json, ingest_panel,
                    read_crosswalk_csv, read_panel_csv, read_partitions_csv,
                    read_program_csv)
from .svgplot import (GRAY, INSIGNIFICANT, PALETTE, SIGNIFICANT, SvgChart,
                      line_chart)
from .tuning import TuningError, tune, write_tune_csv
from ._util import fmt_float

_ERRORS = (ConfigError, PanelError, MoranError, KdeError, EstimationError,
           FlowError, TuningError, InferenceError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moranfield",
        description="Estimate, tune, and forecast the vector field of "
                    "log population density dynamics on the Moran space.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = (
        ("describe", "per-year dispersion, variance decomposition and Moran's I"),
        ("estimate", "estimate the vector field and its significance"),
        ("tune", "grid-search (alpha, h) by one-interval forecast MSE"),
        ("forecast", "integrate trajectories, find attractors and basins"),
        ("diag-partition-switch", "one-year field across a zone-definition change"),
    )
    for name, help_text in specs:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, metavar="PATH",
                        help="TOML run configuration")
        sp.add_argument("--h", type=float, default=None,
                        help="override the global bandwidth")
        sp.add_argument("--alpha", type=float, default=None,
                        help="override the adaptive sensitivity")
        sp.add_argument("--B", type=int, default=None, dest="replicates",
                        help="override the bootstrap replicate count")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the random seed")
        sp.add_argument("--grid", default=None, metavar="NxM",
                        help="override the evaluation grid resolution")
        sp.add_argument("--window", default=None, metavar="Y1:Y2",
                        help="override the year window")
        sp.add_argument("--out", default=None, metavar="DIR",
                        help="override the output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "describe": cmd_describe,
        "estimate": cmd_estimate,
        "tune": cmd_tune,
        "forecast": cmd_forecast,
        "diag-partition-switch": cmd_diag_partition_switch,
    }
    try:
        cfg = load_config(args.config)
        apply_overrides(cfg, h=args.h, alpha=args.alpha,
                        replicates=args.replicates, seed=args.seed,
                        grid=args.grid, window=args.window, out=args.out)
        handlers[args.command](cfg)
    except _ERRORS as exc:
        print(f"moranfield: error: {exc}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# shared pipeline pieces
# ---------------------------------------------------------------------------

def _ingest(cfg: RunConfig):
    records = read_panel_csv(cfg.panel)
    crosswalk = read_crosswalk_csv(cfg.crosswalk) if cfg.crosswalk else None
    partitions = read_partitions_csv(cfg.partitions)
    return ingest_panel(records, crosswalk=crosswalk, partitions=partitions,
                        start=cfg.window_start, end=cfg.window_end)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _eval_grid(cfg: RunConfig, starts: np.ndarray, h: float) -> EvalGrid:
    if cfg.extent is not None:
        x0, x1, y0, y1 = cfg.extent
        return EvalGrid(x0=x0, x1=x1, y0=y0, y1=y1, nx=cfg.nx, ny=cfg.ny)
    S = np.cov(starts, rowvar=False, ddof=1)
    return EvalGrid.covering(starts, h, S, nx=cfg.nx, ny=cfg.ny)


def _window_transitions(cfg: RunConfig, panel):
    w_start = build_weights(panel.partition_for(cfg.window_start), panel.units)
    w_end = build_weights(panel.partition_for(cfg.window_end), panel.units)
    trans = transitions(panel, w_start, w_end, cfg.window_start, cfg.window_end)
    return trans, w_start, w_end


def _write_diagnostics(out: Path, command: str, ingest, entries: dict) -> None:
    payload = {
        "command": command,
        "dropped_units": dropped_units_json(ingest.dropped),
        **entries,
    }
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _field_bbox(field: VectorFieldGrid, *point_sets: np.ndarray):
    xs = [field.grid.x0, field.grid.x1]
    ys = [field.grid.y0, field.grid.y1]
    for pts in point_sets:
        if len(pts):
            xs += [float(np.min(pts[:, 0])), float(np.max(pts[:, 0]))]
            ys += [float(np.min(pts[:, 1])), float(np.max(pts[:, 1]))]
    return (min(xs), max(xs)), (min(ys), max(ys))


def _draw_field(chart: SvgChart, field: VectorFieldGrid, scale: float,
                plot_min_mass: float) -> int:
    """Arrows at supported nodes, colored by significance and faded with
    direction variance; returns the number of arrows drawn."""
    xs, ys = field.grid.xs, field.grid.ys
    drawn = 0
    for iy in range(field.grid.ny):
        for ix in range(field.grid.nx):
            if not field.mass[iy, ix] >= plot_min_mass:
                continue
            dx, dy = field.arrows[iy, ix]
            if not (np.isfinite(dx) and np.isfinite(dy)):
                continue
            sig = bool(field.significant[iy, ix])
            dv = field.dirvar[iy, ix]
            opacity = 1.0 - 0.7 * min(float(dv), 1.0) if np.isfinite(dv) else 1.0
            chart.arrow(xs[ix], ys[iy], dx * scale, dy * scale,
                        SIGNIFICANT if sig else INSIGNIFICANT,
                        opacity=max(opacity, 0.15))
            drawn += 1
    return drawn


def _add_curve(chart: SvgChart, points, color: str, label: str,
               warnings: list[str], seed: int) -> None:
    try:
        curve = moran_curve(points, seed=seed)
    except MoranError as exc:
        warnings.append(f"no neighbour-average curve for {label}: {exc}")
        return
    chart.band(curve.x, curve.lo, curve.hi, color)
    chart.polyline(curve.x, curve.fit, color, width=2.0)
    chart.legend(label, color)


# ---------------------------------------------------------------------------
# describe
# ---------------------------------------------------------------------------

def cmd_describe(cfg: RunConfig) -> None:
    result = _ingest(cfg)
    panel = result.panel
    out = _out_dir(cfg)
    warnings: list[str] = []
    singleton_note: dict[str, list[str]] = {}

    rows = []
    for year in panel.years:
        part = panel.partition_for(year)
        w = build_weights(part, panel.units)
        if w.singleton_units:
            singleton_note[str(year)] = list(w.singleton_units)
        points = to_moran(panel, w, year)
        stats = dispersion_stats(panel, year, part)
        moran = morans_i(points, w, seed=cfg.seed)
        rows.append((year, stats, moran))

    with open(out / "describe.csv", "w", newline="") as fh:
        fh.write("year,mean_density,cv,var_between_share,var_within_share,"
                 "moran_i,moran_lo,moran_hi\n")
        for year, stats, moran in rows:
            fh.write(",".join([
                str(year), fmt_float(stats.mean_density), fmt_float(stats.cv),
                fmt_float(stats.var_between_share), fmt_float(stats.var_within_share),
                fmt_float(moran.value), fmt_float(moran.band_lo),
                fmt_float(moran.band_hi)]) + "\n")

    years = np.array([r[0] for r in rows], dtype=float)
    line_chart(out / "describe_dispersion.svg", years,
               [("coefficient of variation", [r[1].cv for r in rows], PALETTE[0]),
                ("between-zone share", [r[1].var_between_share for r in rows], PALETTE[1]),
                ("within-zone share", [r[1].var_within_share for r in rows], PALETTE[2])],
               title="Density dispersion by year", xlabel="year", ylabel="value")
    line_chart(out / "describe_moran_i.svg", years,
               [("Moran's I", [r[2].value for r in rows], PALETTE[0])],
               bands=[([r[2].band_lo for r in rows],
                       [r[2].band_hi for r in rows], PALETTE[0])],
               title="Global spatial autocorrelation by year",
               xlabel="year", ylabel="Moran's I")

    endpoint_points = {}
    for year in (cfg.window_start, cfg.window_end):
        w = build_weights(panel.partition_for(year), panel.units)
        points = to_moran(panel, w, year)
        endpoint_points[year] = points
        write_moran_points_csv(points, out / f"moran_points_{year}.csv")
        try:
            write_curve_csv(moran_curve(points, seed=cfg.seed),
                            out / f"moran_curve_{year}.csv")
        except MoranError as exc:
            warnings.append(f"no neighbour-average curve for {year}: {exc}")

    coords = np.vstack([p.coords for p in endpoint_points.values()])
    lo = float(coords.min()) - 0.3
    hi = float(coords.max()) + 0.3
    chart = SvgChart((lo, hi), (lo, hi), height=640, equal_aspect=True,
                     title="Neighbour average vs own log density",
                     xlabel="own log density", ylabel="neighbour average")
    chart.diagonal()
    for k, (year, points) in enumerate(endpoint_points.items()):
        color = PALETTE[k % len(PALETTE)]
        chart.markers(points.own, points.lag, color, r=2.0, opacity=0.35)
        _add_curve(chart, points, color, str(year), warnings, cfg.seed)
    chart.write(out / "moran_curve.svg")

    _write_diagnostics(out, "describe", result, {
        "warnings": warnings,
        "singleton_units": singleton_note,
    })


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def cmd_estimate(cfg: RunConfig) -> None:
    alpha, h = cfg.require_smoothing()
    result = _ingest(cfg)
    panel = result.panel
    out = _out_dir(cfg)
    warnings: list[str] = []

    trans, w_start, w_end = _window_transitions(cfg, panel)
    grid = _eval_grid(cfg, trans.starts, h)
    ensemble = bootstrap_fields(trans, h, alpha, grid, replicates=cfg.replicates,
                                seed=cfg.seed, pilot_mean=cfg.pilot_mean)
    field = annotate(ensemble.point_field, ensemble,
                     min_replicates=cfg.min_replicates)
    write_field_csv(out / "field.csv", field)

    n_degenerate = int(ensemble.degenerate.sum())
    if n_degenerate:
        warnings.append(f"{n_degenerate} of {cfg.replicates} bootstrap replicates "
                        "were degenerate and carry no field")

    p0 = to_moran(panel, w_start, cfg.window_start)
    p1 = to_moran(panel, w_end, cfg.window_end)
    (xlo, xhi), (ylo, yhi) = _field_bbox(field, p0.coords, p1.coords)
    chart = SvgChart((xlo, xhi), (ylo, yhi), height=640, equal_aspect=True,
                     title=f"Transition field {cfg.window_start}-{cfg.window_end} "
                           f"(arrows x {fmt_float(cfg.arrow_scale)})",
                     xlabel="own log density", ylabel="neighbour average")
    chart.diagonal()
    chart.markers(p0.coords[:, 0], p0.coords[:, 1], GRAY, r=1.8, opacity=0.3)
    _add_curve(chart, p0, PALETTE[0], str(cfg.window_start), warnings, cfg.seed)
    _add_curve(chart, p1, PALETTE[1], str(cfg.window_end), warnings, cfg.seed)
    drawn = _draw_field(chart, field, cfg.arrow_scale, cfg.plot_min_mass)
    chart.legend("significant arrow", SIGNIFICANT)
    chart.legend("insignificant arrow", INSIGNIFICANT)
    chart.write(out / "field.svg")

    _write_diagnostics(out, "estimate", result, {
        "warnings": warnings,
        "n_transitions": len(trans),
        "arrows_plotted": drawn,
        "degenerate_replicates": n_degenerate,
        "singleton_units": {
            str(cfg.window_start): list(w_start.singleton_units),
            str(cfg.window_end): list(w_end.singleton_units),
        },
    })


# ---------------------------------------------------------------------------
# tune
# ---------------------------------------------------------------------------

def cmd_tune(cfg: RunConfig) -> None:
    result = _ingest(cfg)
    out = _out_dir(cfg)
    trans, _, _ = _window_transitions(cfg, result.panel)
    grid = _eval_grid(cfg, trans.starts, max(cfg.h_grid))
    res = tune(trans, grid, h_grid=cfg.h_grid, alpha_grid=cfg.alpha_grid,
               step=cfg.tune_step, stall_limit=cfg.stall_limit,
               min_mass=cfg.min_mass, holdout_fraction=cfg.holdout_fraction,
               seed=cfg.seed, pilot_mean=cfg.pilot_mean)
    write_tune_csv(out / "tune.csv", res)
    statuses: dict[str, int] = {}
    for c in res.candidates:
        statuses[c.status] = statuses.get(c.status, 0) + 1
    with open(out / "tune.json", "w") as fh:
        json.dump({
            "alpha": res.best_alpha,
            "h": res.best_h,
            "mse": res.best_mse,
            "n_candidates": len(res.candidates),
            "status_counts": dict(sorted(statuses.items())),
        }, fh, indent=2)
        fh.write("\n")
    _write_diagnostics(out, "tune", result, {
        "warnings": [],
        "n_transitions": len(trans),
    })


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------

def cmd_forecast(cfg: RunConfig) -> None:
    alpha, h = cfg.require_smoothing()
    result = _ingest(cfg)
    panel = result.panel
    out = _out_dir(cfg)
    warnings: list[str] = []

    trans, _, w_end = _window_transitions(cfg, panel)
    grid = _eval_grid(cfg, trans.starts, h)
    ensemble = bootstrap_fields(trans, h, alpha, grid, replicates=cfg.replicates,
                                seed=cfg.seed, pilot_mean=cfg.pilot_mean)
    field = annotate(ensemble.point_field, ensemble,
                     min_replicates=cfg.min_replicates)
    n_degenerate = int(ensemble.degenerate.sum())
    if n_degenerate:
        warnings.append(f"{n_degenerate} of {cfg.replicates} bootstrap replicates "
                        "were degenerate and carry no field")

    points = to_moran(panel, w_end, cfg.window_end)
    trajectories, traj_res = forecast_all(
        field, points.coords, points.unit_ids, cfg.horizon,
        step=cfg.flow_step, record_stride=cfg.record_stride,
        min_mass=cfg.min_mass)
    write_trajectories_csv(out / "trajectories.csv", trajectories)

    attractors = find_attractors(
        field, points.coords, horizon=cfg.attractor_horizon, step=cfg.flow_step,
        early_stop=cfg.early_stop, merge_radius=cfg.merge_radius,
        min_share=cfg.min_share, labels=cfg.labels, min_mass=cfg.min_mass)
    if not attractors:
        warnings.append("no attractor met the minimum share; basin shares are "
                        "entirely unresolved")
    report = basin_probabilities(
        ensemble, attractors, points.coords, points.unit_ids, points.population,
        horizon=cfg.attractor_horizon, step=cfg.flow_step,
        early_stop=cfg.early_stop, assign_factor=cfg.assign_factor,
        min_mass=cfg.min_mass)
    payload = report_dict(report, (cfg.window_start, cfg.window_end),
                          trans.tau, h, alpha)
    write_report_json(out / "report.json", payload)

    (xlo, xhi), (ylo, yhi) = _field_bbox(field, points.coords)
    chart = SvgChart((xlo, xhi), (ylo, yhi), height=640, equal_aspect=True,
                     title=f"Long-run basins from {cfg.window_end}",
                     xlabel="own log density", ylabel="neighbour average")
    chart.diagonal()
    colors = [PALETTE[a.id % len(PALETTE)] for a in attractors]
    point_colors = [colors[a] if a >= 0 else GRAY for a in report.assigned]
    chart.markers(points.own, points.lag, point_colors, r=2.2, opacity=0.6)
    for a, color in zip(attractors, colors):
        chart.data_circle(a.center[0], a.center[1], a.radius, color)
        chart.label(a.center[0], a.center[1] + a.radius, a.label, color=color)
        chart.legend(f"{a.label} basin", color)
    chart.legend("unresolved", GRAY)
    chart.write(out / "basins.svg")

    if cfg.program is not None:
        flags = read_program_csv(cfg.program)
        table = policy_overlay(report, flags)
        write_overlay_csv(out / "overlay.csv", table)
        if table.unknown_ids:
            warnings.append(f"{len(table.unknown_ids)} program rows reference "
                            "unknown units")
        if table.missing_ids:
            warnings.append(f"{len(table.missing_ids)} units have no program "
                            "flag; treated as unflagged")

    _write_diagnostics(out, "forecast", result, {
        "warnings": warnings,
        "n_units_forecast": len(points),
        "clamped_trajectories": int(traj_res.clamped.sum()),
        "stalled_trajectories": int(traj_res.stalled.sum()),
        "degenerate_replicates": n_degenerate,
        "attractors": [a.label for a in attractors],
    })


# ---------------------------------------------------------------------------
# diag-partition-switch
# ---------------------------------------------------------------------------

def _switch_years(cfg: RunConfig, panel) -> tuple[int, int, bool]:
    if cfg.diag_years is not None:
        y0, y1 = cfg.diag_years
        switched = panel.partition_for(y0) is not panel.partition_for(y1)
        return y0, y1, switched
    for y in panel.years[:-1]:
        if panel.partition_for(y) is not panel.partition_for(y + 1):
            return y, y + 1, True
    return panel.years[0], panel.years[0] + 1, False


def cmd_diag_partition_switch(cfg: RunConfig) -> None:
    alpha, h = cfg.require_smoothing()
    result = _ingest(cfg)
    panel = result.panel
    out = _out_dir(cfg)
    warnings: list[str] = []

    y0, y1, switched = _switch_years(cfg, panel)
    if not switched:
        warnings.append(f"no zone-definition change between {y0} and {y1}; "
                        "statistic reflects ordinary annual drift")
    w0 = build_weights(panel.partition_for(y0), panel.units)
    w1 = build_weights(panel.partition_for(y1), panel.units)
    trans = transitions(panel, w0, w1, y0, y1)
    grid = _eval_grid(cfg, trans.starts, h)
    ensemble = bootstrap_fields(trans, h, alpha, grid, replicates=cfg.replicates,
                                seed=cfg.seed, pilot_mean=cfg.pilot_mean)
    field = annotate(ensemble.point_field, ensemble,
                     min_replicates=cfg.min_replicates)
    write_field_csv(out / "diag_field.csv", field)

    sig = field.significant & np.isfinite(field.arrows[:, :, 0])
    n_sig = int(sig.sum())
    if n_sig:
        dx = np.abs(field.arrows[:, :, 0][sig])
        dy = np.abs(field.arrows[:, :, 1][sig])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = float(np.median(dx / dy))
        median_ratio = ratio if np.isfinite(ratio) else None
        if median_ratio is None:
            warnings.append("median |dx|/|dy| is not finite (vertical components "
                            "vanish at most significant nodes)")
    else:
        median_ratio = None
        warnings.append("no significant node; the verticality statistic is absent")

    threshold = 0.2
    payload = {
        "year_from": y0,
        "year_to": y1,
        "switch_detected": switched,
        "n_significant": n_sig,
        "median_abs_dx_over_dy": median_ratio,
        "vertical_threshold": threshold,
        "vertical": (median_ratio < threshold) if median_ratio is not None else None,
    }
    with open(out / "diag_partition_switch.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")

    (xlo, xhi), (ylo, yhi) = _field_bbox(field, trans.starts)
    chart = SvgChart((xlo, xhi), (ylo, yhi), height=640, equal_aspect=True,
                     title=f"One-year transition field {y0}-{y1} "
                           f"(arrows x {fmt_float(cfg.arrow_scale)})",
                     xlabel="own log density", ylabel="neighbour average")
    chart.diagonal()
    chart.markers(trans.starts[:, 0], trans.starts[:, 1], GRAY, r=1.8, opacity=0.3)
    _draw_field(chart, field, cfg.arrow_scale, cfg.plot_min_mass)
    chart.legend("significant arrow", SIGNIFICANT)
    chart.legend("insignificant arrow", INSIGNIFICANT)
    chart.write(out / "diag_field.svg")

    _write_diagnostics(out, "diag-partition-switch", result, {
        "warnings": warnings,
        "n_transitions": len(trans),
        "switch_detected": switched,
        "n_significant": n_sig,
    })


if __name__ == "__main__":
    sys.exit(main())
