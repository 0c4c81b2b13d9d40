"""Load, validate and harmonize the unit/year panel and zone partitions.

The canonical in-memory dataset is a `Panel`: an immutable matrix of log
population density (units x years) plus populations, reference areas and
the zone partitions that are valid over the panel years. Unit definitions
that changed over time are harmonized through a `Crosswalk` before any
density is computed: populations and areas of merged source units are
summed, and the harmonized unit keeps the area of the window's final year
for the whole window.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class PanelError(ValueError):
    """Invalid panel input: bad records, crosswalk or partition metadata."""


@dataclass(frozen=True)
class UnitRecord:
    unit_id: str
    year: int
    population: int
    area_km2: float


@dataclass(frozen=True)
class CrosswalkEntry:
    source_unit_id: str
    target_unit_id: str
    year_from: int
    year_to: int


class Crosswalk:
    """Mapping of source unit ids to harmonized target ids over year ranges.

    The mapping is a function on (source_unit_id, year): overlapping year
    ranges for one source are rejected. A target id may not itself be a
    source mapping elsewhere in an overlapping range; applying the
    crosswalk is then idempotent.
    """

    def __init__(self, entries: Iterable[CrosswalkEntry], reference_year: int | None = None):
        self.entries = list(entries)
        self.reference_year = reference_year
        self._by_source: dict[str, list[CrosswalkEntry]] = {}
        for e in self.entries:
            if e.year_from > e.year_to:
                raise PanelError(f"crosswalk range inverted for {e.source_unit_id}: "
                                 f"{e.year_from}-{e.year_to}")
            self._by_source.setdefault(e.source_unit_id, []).append(e)
        for source, ents in self._by_source.items():
            ents.sort(key=lambda e: e.year_from)
            for a, b in zip(ents, ents[1:]):
                if b.year_from <= a.year_to:
                    raise PanelError(f"overlapping crosswalk ranges for source {source}")
        for e in self.entries:
            if e.target_unit_id == e.source_unit_id:
                continue
            for t in self._by_source.get(e.target_unit_id, ()):
                overlap = not (t.year_to < e.year_from or t.year_from > e.year_to)
                if overlap and t.target_unit_id != e.target_unit_id:
                    raise PanelError(
                        f"crosswalk target {e.target_unit_id} is itself remapped to "
                        f"{t.target_unit_id} in {t.year_from}-{t.year_to}; chained "
                        f"mappings break harmonization idempotence")

    @classmethod
    def identity(cls) -> "Crosswalk":
        return cls([])

    def apply(self, unit_id: str, year: int) -> str:
        for e in self._by_source.get(unit_id, ()):
            if e.year_from <= year <= e.year_to:
                return e.target_unit_id
        return unit_id

    def target_ids(self) -> set[str]:
        return {e.target_unit_id for e in self.entries}


class ZonePartition:
    """Assignment of units to zones, valid over [valid_from, valid_to]."""

    def __init__(self, zone_of: dict[str, str], valid_from: int, valid_to: int):
        if valid_from > valid_to:
            raise PanelError(f"partition validity inverted: {valid_from}-{valid_to}")
        self.zone_of = dict(zone_of)
        self.valid_from = valid_from
        self.valid_to = valid_to

    def covers(self, year: int) -> bool:
        return self.valid_from <= year <= self.valid_to

    def zone(self, unit_id: str) -> str:
        try:
            return self.zone_of[unit_id]
        except KeyError:
            raise PanelError(f"unit {unit_id} has no zone in partition "
                             f"{self.valid_from}-{self.valid_to}") from None

    def __repr__(self) -> str:
        return f"ZonePartition({len(self.zone_of)} units, {self.valid_from}-{self.valid_to})"


@dataclass(frozen=True)
class DroppedUnit:
    unit_id: str
    reason: str
    detail: str = ""


@dataclass(frozen=True)
class Panel:
    """Harmonized panel of log population density.

    log_density[j, t] = ln(population / area) for unit j in year t; finite
    for every retained unit by construction. `area_km2` is the harmonized
    area of the final panel year, constant across the window.
    """

    units: tuple[str, ...]
    years: tuple[int, ...]
    log_density: np.ndarray          # (N, T) float
    population: np.ndarray           # (N, T) int64
    area_km2: np.ndarray             # (N,) float
    partitions: tuple[ZonePartition, ...] = field(default=())

    @property
    def n_units(self) -> int:
        return len(self.units)

    def year_index(self, year: int) -> int:
        try:
            return self.years.index(year)
        except ValueError:
            raise PanelError(f"year {year} not in panel {self.years[0]}-{self.years[-1]}") from None

    def unit_index(self, unit_id: str) -> int:
        try:
            return self.units.index(unit_id)
        except ValueError:
            raise PanelError(f"unit {unit_id} not in panel") from None

    def partition_for(self, year: int) -> ZonePartition:
        hits = [p for p in self.partitions if p.covers(year)]
        if not hits:
            raise PanelError(f"no zone partition covers year {year}")
        if len(hits) > 1:
            raise PanelError(f"{len(hits)} zone partitions cover year {year}; expected one")
        return hits[0]

    def log_density_at(self, year: int) -> np.ndarray:
        return self.log_density[:, self.year_index(year)]

    def population_at(self, year: int) -> np.ndarray:
        return self.population[:, self.year_index(year)]


@dataclass(frozen=True)
class IngestResult:
    panel: Panel
    dropped: tuple[DroppedUnit, ...]


def ingest_panel(records: Iterable[UnitRecord],
                 crosswalk: Crosswalk | None = None,
                 partitions: Sequence[ZonePartition] = (),
                 start: int | None = None,
                 end: int | None = None) -> IngestResult:
    """Harmonize records under the crosswalk and build the canonical panel.

    Populations and areas of sources merged into one target are summed per
    year; the target's area is then frozen at the final window year. Units
    missing any window year, or with zero population in some window year,
    are dropped and reported. Duplicate (unit, year) input rows, units
    without a zone, and non-positive areas are hard errors.
    """
    crosswalk = crosswalk or Crosswalk.identity()

    pop: dict[tuple[str, int], int] = {}
    area: dict[tuple[str, int], float] = {}
    seen: set[tuple[str, int]] = set()
    source_units: set[str] = set()
    for rec in records:
        if rec.area_km2 <= 0:
            raise PanelError(f"non-positive area for {rec.unit_id} in {rec.year}: {rec.area_km2}")
        if rec.population < 0:
            raise PanelError(f"negative population for {rec.unit_id} in {rec.year}")
        key = (rec.unit_id, rec.year)
        if key in seen:
            raise PanelError(f"duplicate record for unit {rec.unit_id}, year {rec.year}")
        seen.add(key)
        source_units.add(rec.unit_id)
        target = crosswalk.apply(rec.unit_id, rec.year)
        tkey = (target, rec.year)
        pop[tkey] = pop.get(tkey, 0) + rec.population
        area[tkey] = area.get(tkey, 0.0) + rec.area_km2

    if not pop:
        raise PanelError("no input records")

    all_years = sorted({y for (_, y) in pop})
    if len(all_years) < 2:
        raise PanelError("records must cover at least two distinct years")
    if all_years != list(range(all_years[0], all_years[-1] + 1)):
        raise PanelError(f"panel years are not contiguous: {all_years}")

    start = all_years[0] if start is None else start
    end = all_years[-1] if end is None else end
    if start >= end:
        raise PanelError(f"empty window [{start}, {end}]")
    if start not in all_years or end not in all_years:
        raise PanelError(f"window [{start}, {end}] outside panel years "
                         f"{all_years[0]}-{all_years[-1]}")
    years = list(range(start, end + 1))

    ref_year = crosswalk.reference_year if crosswalk.reference_year is not None else end
    units_at_ref = {t for (t, y) in pop if y == ref_year}
    missing_targets = crosswalk.target_ids() - units_at_ref
    if missing_targets:
        raise PanelError(f"crosswalk targets absent from reference year {ref_year}: "
                         f"{sorted(missing_targets)}")

    targets = sorted({t for (t, _) in pop})
    retained: list[str] = []
    dropped: list[DroppedUnit] = []
    for t in targets:
        missing = [y for y in years if (t, y) not in pop]
        if missing:
            dropped.append(DroppedUnit(t, "missing_years", f"missing {missing[0]}"
                                       + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else "")))
            continue
        zero = [y for y in years if pop[(t, y)] == 0]
        if zero:
            dropped.append(DroppedUnit(t, "zero_population", f"zero in {zero[0]}"))
            continue
        retained.append(t)
    if dropped:
        log.warning("ingest dropped %d of %d harmonized units (%s)",
                    len(dropped), len(targets),
                    ", ".join(sorted({d.reason for d in dropped})))
    if not retained:
        raise PanelError("no units survive harmonization over the requested window")

    parts = _validated_partitions(partitions, years)
    for p in parts:
        part_years = [y for y in years if p.covers(y)]
        if not part_years:
            continue
        for t in retained:
            if t not in p.zone_of:
                raise PanelError(f"unit {t} has no zone in partition "
                                 f"{p.valid_from}-{p.valid_to}")

    n, T = len(retained), len(years)
    population = np.empty((n, T), dtype=np.int64)
    for j, t in enumerate(retained):
        for k, y in enumerate(years):
            population[j, k] = pop[(t, y)]
    area_ref = np.array([area[(t, end)] for t in retained], dtype=float)
    log_density = np.log(population / area_ref[:, None])

    panel = Panel(units=tuple(retained), years=tuple(years),
                  log_density=log_density, population=population,
                  area_km2=area_ref, partitions=tuple(parts))
    return IngestResult(panel=panel, dropped=tuple(dropped))


def _validated_partitions(partitions: Sequence[ZonePartition],
                          years: Sequence[int]) -> list[ZonePartition]:
    parts = sorted(partitions, key=lambda p: p.valid_from)
    for y in years:
        hits = [p for p in parts if p.covers(y)]
        if not hits:
            raise PanelError(f"no zone partition covers panel year {y}")
        if len(hits) > 1:
            raise PanelError(f"{len(hits)} zone partitions cover year {y}; expected one")
    return parts


def select_window(panel: Panel, start: int, end: int) -> Panel:
    """Restrict the panel to [start, end], keeping units present throughout."""
    if start >= end:
        raise PanelError(f"empty window [{start}, {end}]")
    if start not in panel.years or end not in panel.years:
        raise PanelError(f"window [{start}, {end}] outside panel years "
                         f"{panel.years[0]}-{panel.years[-1]}")
    i0 = panel.year_index(start)
    i1 = panel.year_index(end)
    years = panel.years[i0:i1 + 1]
    if panel.n_units == 0:
        raise PanelError("no units survive the window")
    return Panel(units=panel.units, years=tuple(years),
                 log_density=panel.log_density[:, i0:i1 + 1],
                 population=panel.population[:, i0:i1 + 1],
                 area_km2=panel.area_km2,
                 partitions=tuple(p for p in panel.partitions
                                  if p.valid_to >= start and p.valid_from <= end))


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def read_panel_csv(path: str | Path) -> list[UnitRecord]:
    """Read `unit_id,year,population,area_km2` rows."""
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        _require_columns(reader, ("unit_id", "year", "population", "area_km2"), path)
        for i, row in enumerate(reader, start=2):
            try:
                records.append(UnitRecord(
                    unit_id=row["unit_id"].strip(),
                    year=int(row["year"]),
                    population=_parse_count(row["population"]),
                    area_km2=float(row["area_km2"]),
                ))
            except (TypeError, ValueError) as exc:
                raise PanelError(f"{path}:{i}: bad panel row: {exc}") from exc
    return records


def read_crosswalk_csv(path: str | Path, reference_year: int | None = None) -> Crosswalk:
    """Read `source_unit_id,target_unit_id,year_from,year_to` rows."""
    entries = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        _require_columns(reader, ("source_unit_id", "target_unit_id", "year_from", "year_to"), path)
        for i, row in enumerate(reader, start=2):
            try:
                entries.append(CrosswalkEntry(
                    source_unit_id=row["source_unit_id"].strip(),
                    target_unit_id=row["target_unit_id"].strip(),
                    year_from=int(row["year_from"]),
                    year_to=int(row["year_to"]),
                ))
            except (TypeError, ValueError) as exc:
                raise PanelError(f"{path}:{i}: bad crosswalk row: {exc}") from exc
    return Crosswalk(entries, reference_year=reference_year)


def read_partitions_csv(path: str | Path) -> list[ZonePartition]:
    """Read `unit_id,zone_id,valid_from,valid_to` rows, one partition per window."""
    windows: dict[tuple[int, int], dict[str, str]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        _require_columns(reader, ("unit_id", "zone_id", "valid_from", "valid_to"), path)
        for i, row in enumerate(reader, start=2):
            try:
                key = (int(row["valid_from"]), int(row["valid_to"]))
                unit = row["unit_id"].strip()
            except (TypeError, ValueError) as exc:
                raise PanelError(f"{path}:{i}: bad partition row: {exc}") from exc
            zone_of = windows.setdefault(key, {})
            if unit in zone_of:
                raise PanelError(f"{path}:{i}: unit {unit} assigned twice in "
                                 f"partition {key[0]}-{key[1]}")
            zone_of[unit] = row["zone_id"].strip()
    return [ZonePartition(zone_of, valid_from=k[0], valid_to=k[1])
            for k, zone_of in sorted(windows.items())]


def read_program_csv(path: str | Path) -> dict[str, bool]:
    """Read `unit_id,program_flag` rows; the flag is 0/1 or true/false."""
    flags: dict[str, bool] = {}
    truthy = {"1": True, "true": True, "0": False, "false": False}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        _require_columns(reader, ("unit_id", "program_flag"), path)
        for i, row in enumerate(reader, start=2):
            unit = row["unit_id"].strip()
            raw = row["program_flag"].strip().lower()
            if raw not in truthy:
                raise PanelError(f"{path}:{i}: program_flag must be 0/1 or "
                                 f"true/false, got {row['program_flag']!r}")
            if unit in flags:
                raise PanelError(f"{path}:{i}: duplicate program row for unit {unit}")
            flags[unit] = truthy[raw]
    return flags


def dropped_units_json(dropped: Sequence[DroppedUnit]) -> list[dict]:
    """Diagnostics report payload: dropped units with reason codes."""
    return [{"unit_id": d.unit_id, "reason": d.reason, "detail": d.detail} for d in dropped]


def _parse_count(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"population is not a whole number: {text}")
    return int(value)


def _require_columns(reader: csv.DictReader, names: tuple[str, ...], path) -> None:
    missing = [c for c in names if c not in (reader.fieldnames or ())]
    if missing:
        raise PanelError(f"{path}: missing columns {missing}; found {reader.fieldnames}")
