"""Generate the packaged demo dataset under src/moranfield/data/.

The panel is synthetic but structured like the real thing:

* 302 harmonized units over 1984-2019, grouped into commuting zones of
  six units (plus two deliberate singleton zones);
* 14 units anchored to published metropolitan figures (1984/2019 log
  density and population); their areas are back-derived so the log
  densities round back to the anchored values;
* zone partition A (1984-2001) and a reshuffled partition B (2002-2019)
  that mixes density strata, producing a downward jump in Moran's I at
  2002 and near-vertical 2001->2002 Moran-space movements;
* two crosswalk merge groups whose fragments split a designed series, so
  harmonization reconstructs it exactly;
* a program-membership table flagging mostly low-density units.

Run from the repository root:  python tools/make_demo_data.py
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "moranfield" / "data"

YEARS = list(range(1984, 2020))
Y0, Y1 = YEARS[0], YEARS[-1]
SPAN = Y1 - Y0

# label, log density 1984, population 1984, log density 2019, population 2019
METROS = [
    ("roma", 7.70, 2844903, 7.69, 2820219),
    ("milano", 9.06, 1560155, 8.95, 1395980),
    ("napoli", 9.23, 1207337, 8.99, 954318),
    ("torino", 9.04, 1097355, 8.80, 860793),
    ("palermo", 8.40, 711194, 8.31, 652720),
    ("genova", 8.05, 748634, 7.77, 569184),
    ("bologna", 8.06, 447893, 7.93, 393248),
    ("firenze", 8.37, 442345, 8.19, 369885),
    ("bari", 8.05, 368772, 7.90, 316491),
    ("catania", 7.64, 380564, 7.40, 297752),
    ("venezia", 6.70, 339883, 6.44, 259961),
    ("messina", 7.08, 254951, 6.98, 229280),
    ("reggio_calabria", 6.61, 177807, 6.60, 176299),
    ("cagliari", 7.93, 236165, 7.49, 151504),
]

N_SYN_ZONES = 36
ZONE_SIZE = 6


def metro_area(d84: float, p84: int, d19: float, p19: int) -> float:
    """Constant area under which both published (density, population)
    pairs round back to their two-decimal log densities.

    Each pair constrains the area to an interval; the published numbers
    are mutually consistent, so the intervals overlap and the midpoint of
    the intersection is returned.
    """
    lo84, hi84 = p84 / math.exp(d84 + 0.005), p84 / math.exp(d84 - 0.005)
    lo19, hi19 = p19 / math.exp(d19 + 0.005), p19 / math.exp(d19 - 0.005)
    lo, hi = max(lo84, lo19), min(hi84, hi19)
    if lo >= hi:  # fall back to the first-year anchor
        return p84 / math.exp(d84)
    return 0.5 * (lo + hi)


def synthetic_units(rng: np.random.Generator):
    """Unit definitions: id -> (area, d1984, d2019, zoneA)."""
    units: dict[str, dict] = {}

    # metro zones: the city plus five hinterland units in a common low
    # band, so the dense core sits far above its neighbour average and the
    # hinterland mass stays below the panel mean
    for i, (name, d84, p84, d19, p19) in enumerate(METROS):
        units[name] = {"area": metro_area(d84, p84, d19, p19),
                       "d84": None, "d19": None,
                       "pop84": p84, "pop19": p19, "zoneA": f"MZ{i:02d}",
                       "metro": True}
        noise = rng.normal(0.0, 0.45, ZONE_SIZE - 1)
        noise -= noise.mean()
        base_h = min(d84 - 1.2, 4.8)
        for k in range(1, ZONE_SIZE):
            d84p = base_h + float(noise[k - 1])
            units[f"{name}_p{k}"] = {
                "area": float(np.exp(rng.normal(np.log(60.0), 0.5))),
                "d84": d84p, "d19": None, "zoneA": f"MZ{i:02d}", "metro": False}

    # synthetic zones on a ladder of base densities; the ladder thins out
    # toward the top so high-density zones have sparser neighbours in the
    # base distribution, and within-zone noise is centred so neighbour
    # averages regress toward the zone base
    q = (np.arange(N_SYN_ZONES) + 0.5) / N_SYN_ZONES
    bases = 3.0 + 5.8 * (1.0 - np.sqrt(1.0 - q)) + rng.normal(0.0, 0.05, N_SYN_ZONES)
    for r in range(N_SYN_ZONES):
        noise = rng.normal(0.0, 0.6, ZONE_SIZE)
        noise -= noise.mean()
        for k in range(ZONE_SIZE):
            units[f"u{r:02d}_{k}"] = {
                "area": float(np.exp(rng.normal(np.log(60.0), 0.5))),
                "d84": float(bases[r] + noise[k]),
                "d19": None, "zoneA": f"SZ{r:02d}", "metro": False}

    # two singleton zones, kept singleton in both partitions
    units["solo_alta"] = {"area": 42.0, "d84": 6.5, "d19": None,
                          "zoneA": "SOLO_1", "metro": False}
    units["solo_bassa"] = {"area": 130.0, "d84": 4.1, "d19": None,
                           "zoneA": "SOLO_2", "metro": False}

    # long-run drift: dense units densify, sparse ones empty out
    for info in units.values():
        if info["metro"]:
            continue
        d84 = info["d84"]
        info["d19"] = d84 + 0.35 * math.tanh((d84 - 6.0) / 2.0) + rng.normal(0.0, 0.05)
    return units


def density_path(d84: float, d19: float, phase: float) -> list[float]:
    """Log density per year: linear trend plus a small smooth wiggle that
    vanishes at both endpoints."""
    out = []
    for t, year in enumerate(YEARS):
        frac = t / SPAN
        wiggle = 0.01 * math.sin(2.0 * math.pi * frac * 3.0 + phase) \
            * math.sin(math.pi * frac)
        out.append(d84 + frac * (d19 - d84) + wiggle)
    return out


def build_panel(units: dict, rng: np.random.Generator) -> dict[str, list[int]]:
    """Population per unit per year (harmonized series)."""
    pops: dict[str, list[int]] = {}
    for uid, info in units.items():
        if info["metro"]:
            p84, p19 = info["pop84"], info["pop19"]
            ratio = (p19 / p84) ** (1.0 / SPAN)
            series = [int(round(p84 * ratio ** t)) for t in range(SPAN + 1)]
            series[0], series[-1] = p84, p19
        else:
            phase = float(rng.uniform(0.0, 2.0 * math.pi))
            path = density_path(info["d84"], info["d19"], phase)
            series = [max(1, int(round(info["area"] * math.exp(d)))) for d in path]
        pops[uid] = series
    return pops


def partition_b(units: dict) -> dict[str, str]:
    """Reshuffled zones: every zone exchanges members across strata."""
    zone_b: dict[str, str] = {}
    for uid, info in units.items():
        zone_b[uid] = info["zoneA"].replace("MZ", "BMZ").replace("SZ", "BSZ")

    half = N_SYN_ZONES // 2
    for r in range(half):
        p = r + half  # exchange one member across distant strata
        zone_b[f"u{r:02d}_0"] = f"BSZ{p:02d}"
        zone_b[f"u{p:02d}_0"] = f"BSZ{r:02d}"
    for i, (name, *_rest) in enumerate(METROS):
        r = i  # swap one hinterland unit with a unit of a low zone
        zone_b[f"{name}_p5"] = f"BSZ{r:02d}"
        zone_b[f"u{r:02d}_2"] = f"BMZ{i:02d}"
    return zone_b


MERGES = {
    # target: (fragments with population shares, last fragmented year)
    "u20_4": ((("u20_4a", 0.6), ("u20_4b", 0.4)), 2004),
    "u25_5": ((("u25_5a", 0.45), ("u25_5b", 0.35), ("u25_5c", 0.2)), 1999),
}


def fragment_rows(uid: str, year: int, pop: int, area: float):
    """Split one harmonized observation into pre-merge fragment rows."""
    fragments, last_year = MERGES[uid]
    if year > last_year:
        return [(uid, year, pop, area)]
    rows = []
    assigned = 0
    for frag_id, share in fragments[1:]:
        p = int(math.floor(pop * share))
        rows.append((frag_id, year, p, area * share))
        assigned += p
    first_id, first_share = fragments[0]
    rows.insert(0, (first_id, year, pop - assigned, area * first_share))
    return rows


def main() -> None:
    rng = np.random.default_rng(20260818)
    units = synthetic_units(rng)
    pops = build_panel(units, rng)
    zone_b = partition_b(units)
    OUT.mkdir(parents=True, exist_ok=True)

    with open(OUT / "demo_panel.csv", "w", newline="") as fh:
        fh.write("unit_id,year,population,area_km2\n")
        for uid in sorted(units):
            area = units[uid]["area"]
            for t, year in enumerate(YEARS):
                for rid, ryear, rpop, rarea in (
                        fragment_rows(uid, year, pops[uid][t], area)
                        if uid in MERGES else
                        [(uid, year, pops[uid][t], area)]):
                    fh.write(f"{rid},{ryear},{rpop},{rarea!r}\n")

    with open(OUT / "demo_crosswalk.csv", "w", newline="") as fh:
        fh.write("source_unit_id,target_unit_id,year_from,year_to\n")
        for target, (fragments, last_year) in sorted(MERGES.items()):
            for frag_id, _share in fragments:
                fh.write(f"{frag_id},{target},{Y0},{last_year}\n")

    with open(OUT / "demo_partitions.csv", "w", newline="") as fh:
        fh.write("unit_id,zone_id,valid_from,valid_to\n")
        for uid in sorted(units):
            fh.write(f"{uid},{units[uid]['zoneA']},{Y0},2001\n")
        for uid in sorted(units):
            zb = zone_b[uid] if uid not in ("solo_alta", "solo_bassa") \
                else units[uid]["zoneA"]
            fh.write(f"{uid},{zb},2002,{Y1}\n")

    with open(OUT / "demo_program.csv", "w", newline="") as fh:
        fh.write("unit_id,program_flag\n")
        for i, uid in enumerate(sorted(units)):
            info = units[uid]
            d84 = info["d84"] if info["d84"] is not None else 9.0
            flag = 1 if (d84 < 4.6 or i % 29 == 0) else 0
            fh.write(f"{uid},{flag}\n")
        fh.write("cartagine,1\n")  # unknown unit, exercises overlay reporting

    n_units = len(units)
    n_rows = sum(1 for _ in open(OUT / "demo_panel.csv")) - 1
    print(f"wrote {n_units} harmonized units, {n_rows} panel rows -> {OUT}")


if __name__ == "__main__":
    main()
