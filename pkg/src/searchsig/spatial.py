"""Geographic hierarchy, centroid geometry, and split generation.

Regions form a three-level hierarchy: zip -> county -> state. Splits are
county-blocked (all zips of a county share one assignment) so that held-out
regions are spatially separated from training regions, or state-grouped for
the cross-state generalization task.

All functions here are pure; ``RegionHierarchy`` is immutable after
construction and safe for concurrent reads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import NoOverlap, TooFewCounties, TooFewStates, ValidationError

EARTH_RADIUS_KM = 6371.0088

#: Assignment token for the held-out test partition; folds are ints 0..K-1.
TEST = "TEST"


@dataclass(frozen=True)
class ZipRecord:
    """One zip-level region with its parents, centroid, and size attributes."""

    zip_id: str
    county_fips: str
    state_fips: str
    lat: float
    lon: float
    population: int
    land_area_km2: float


@dataclass(frozen=True)
class OverlapRow:
    """Pre-computed land-area overlap between a zip and a candidate county."""

    zip_id: str
    county_fips: str
    overlap_km2: float


def derive_zip_to_county(
    overlaps: Iterable[OverlapRow],
    expected_zips: Iterable[str] | None = None,
) -> dict[str, str]:
    """Assign each zip to the county with the largest land-area overlap.

    Ties break toward the ascending county FIPS. Raises :class:`NoOverlap`
    for any zip without a positive-overlap row; pass ``expected_zips`` to
    also catch zips missing from the table entirely.
    """
    rows = list(overlaps)
    best: dict[str, tuple[float, str]] = {}
    for row in rows:
        if row.overlap_km2 <= 0:
            continue
        cur = best.get(row.zip_id)
        cand = (row.overlap_km2, row.county_fips)
        if cur is None:
            best[row.zip_id] = cand
        elif cand[0] > cur[0] or (cand[0] == cur[0] and cand[1] < cur[1]):
            best[row.zip_id] = cand
    required = {r.zip_id for r in rows}
    if expected_zips is not None:
        required |= set(expected_zips)
    missing = required - set(best)
    if missing:
        raise NoOverlap(sorted(missing)[0])
    return {z: county for z, (_, county) in best.items()}


@dataclass(frozen=True)
class RegionHierarchy:
    """Immutable zip/county/state hierarchy with derived lookup tables."""

    zips: tuple[ZipRecord, ...]
    county_of: dict[str, str] = field(repr=False)
    state_of_county: dict[str, str] = field(repr=False)
    counties: tuple[str, ...] = field(repr=False)
    states: tuple[str, ...] = field(repr=False)
    zips_by_county: dict[str, tuple[str, ...]] = field(repr=False)

    def __len__(self) -> int:
        return len(self.zips)

    def record(self, zip_id: str) -> ZipRecord:
        return self._index[zip_id]

    def __contains__(self, zip_id: str) -> bool:
        return zip_id in self._index

    def state_of(self, zip_id: str) -> str:
        return self.state_of_county[self.county_of[zip_id]]

    def zips_in_state(self, state_fips: str) -> list[str]:
        return [z.zip_id for z in self.zips if z.state_fips == state_fips]

    @property
    def _index(self) -> dict[str, ZipRecord]:
        idx = self.__dict__.get("_index_cache")
        if idx is None:
            idx = {z.zip_id: z for z in self.zips}
            object.__setattr__(self, "_index_cache", idx)
        return idx


def build_hierarchy(
    records: Sequence[ZipRecord],
    overlaps: Sequence[OverlapRow] | None = None,
) -> RegionHierarchy:
    """Validate zip records and derive the hierarchy lookups.

    When an overlap table is given, the zip->county mapping is re-derived
    from it (largest overlap wins) and overrides the ``county_fips`` column;
    every zip must then have at least one positive-overlap row.
    """
    if not records:
        raise ValidationError("geography is empty")
    seen: set[str] = set()
    for rec in records:
        if len(rec.zip_id) != 5 or not rec.zip_id.isdigit():
            raise ValidationError(f"zip id {rec.zip_id!r} is not a 5-digit code")
        if rec.zip_id in seen:
            raise ValidationError(f"duplicate zip id {rec.zip_id!r}")
        seen.add(rec.zip_id)
        if not (-90.0 <= rec.lat <= 90.0) or not (-180.0 <= rec.lon <= 180.0):
            raise ValidationError(f"zip {rec.zip_id}: centroid out of range")
        if rec.population < 0:
            raise ValidationError(f"zip {rec.zip_id}: negative population")
        if rec.land_area_km2 <= 0:
            raise ValidationError(f"zip {rec.zip_id}: land area must be positive")

    if overlaps is not None:
        derived = derive_zip_to_county(overlaps, expected_zips=(r.zip_id for r in records))
        records = [
            ZipRecord(
                r.zip_id, derived[r.zip_id], r.state_fips,
                r.lat, r.lon, r.population, r.land_area_km2,
            )
            for r in records
        ]

    ordered = tuple(sorted(records, key=lambda r: r.zip_id))
    county_of = {r.zip_id: r.county_fips for r in ordered}
    state_of_county: dict[str, str] = {}
    for rec in ordered:
        prev = state_of_county.setdefault(rec.county_fips, rec.state_fips)
        if prev != rec.state_fips:
            raise ValidationError(
                f"county {rec.county_fips!r} spans states {prev!r} and {rec.state_fips!r}"
            )
    by_county: dict[str, list[str]] = {}
    for rec in ordered:
        by_county.setdefault(rec.county_fips, []).append(rec.zip_id)
    return RegionHierarchy(
        zips=ordered,
        county_of=county_of,
        state_of_county=state_of_county,
        counties=tuple(sorted(state_of_county)),
        states=tuple(sorted(set(state_of_county.values()))),
        zips_by_county={c: tuple(zs) for c, zs in by_county.items()},
    )


# --- seeded shuffling --------------------------------------------------------

def stream_rng(seed: int, stream: str) -> np.random.Generator:
    """Philox generator keyed by (seed, stream label).

    Philox is a 64-bit counter-based generator with a guaranteed-stable
    bit stream, and independent keys give independent streams, so every
    consumer draws from its own reproducible source regardless of call
    order elsewhere.
    """
    digest = hashlib.blake2b(stream.encode("utf-8"), digest_size=8).digest()
    label = int.from_bytes(digest, "big")
    key = (int(seed) & (2**64 - 1)) + (label << 64)
    return np.random.Generator(np.random.Philox(key=key))


def seeded_shuffle(items: Sequence[str], seed: int, stream: str) -> list[str]:
    """Deterministic Fisher-Yates shuffle of ``sorted(items)``."""
    rng = stream_rng(seed, stream)
    arr = sorted(items)
    for i in range(len(arr) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        arr[i], arr[j] = arr[j], arr[i]
    return arr


# --- splits ------------------------------------------------------------------

@dataclass
class SplitSpec:
    """County-coherent assignment of zips to folds 0..K-1 and/or TEST.

    ``members`` is the authoritative per-assignment zip listing used by the
    harness; it is derived from ``fold_of`` at construction and must remain
    a partition of the eligible zips (the harness asserts this on every run).
    """

    seed: int
    k_folds: int
    holdout_frac: float
    holdout_counties: frozenset[str]
    fold_of: dict[str, int | str]
    filter_threshold: int | None = None
    members: dict[int | str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.members:
            grouped: dict[int | str, list[str]] = {}
            for zip_id in sorted(self.fold_of):
                grouped.setdefault(self.fold_of[zip_id], []).append(zip_id)
            self.members = {a: tuple(zs) for a, zs in grouped.items()}

    @property
    def fold_ids(self) -> list[int]:
        return list(range(self.k_folds))

    def assignment_counts(self) -> dict[int | str, int]:
        return {a: len(zs) for a, zs in self.members.items()}


def population_filter(hierarchy: RegionHierarchy, threshold: int) -> set[str]:
    """Zips with population strictly greater than ``threshold``."""
    if threshold < 0:
        raise ValidationError("population threshold must be >= 0")
    return {z.zip_id for z in hierarchy.zips if z.population > threshold}


def _eligible_zips(hierarchy: RegionHierarchy, threshold: int | None) -> list[str]:
    if threshold is None:
        return [z.zip_id for z in hierarchy.zips]
    keep = population_filter(hierarchy, threshold)
    return [z.zip_id for z in hierarchy.zips if z.zip_id in keep]


def county_holdout_split(
    hierarchy: RegionHierarchy,
    seed: int,
    holdout_frac: float = 0.20,
    k_folds: int = 5,
    filter_threshold: int | None = None,
) -> SplitSpec:
    """Hold out a county fraction as TEST, deal the rest into K folds.

    Counties are shuffled deterministically; the first
    ``floor(holdout_frac * n_counties)`` become TEST and the remainder are
    dealt round-robin (in shuffled order) to folds 0..K-1. Every zip
    inherits its county's assignment, so folds are spatially blocked. The
    optional population filter restricts which zips enter the fold map but
    never changes the county assignments themselves.
    """
    if not (0.0 < holdout_frac < 1.0):
        raise ValidationError("holdout_frac must be in (0, 1)")
    if k_folds < 2:
        raise ValidationError("k_folds must be >= 2")
    counties = list(hierarchy.counties)
    if len(counties) < k_folds + 1:
        raise TooFewCounties(
            f"{len(counties)} counties cannot fill {k_folds} folds plus a holdout"
        )
    shuffled = seeded_shuffle(counties, seed, "county_holdout")
    n_test = int(holdout_frac * len(shuffled))
    test_counties = frozenset(shuffled[:n_test])
    assignment_of_county: dict[str, int | str] = {c: TEST for c in test_counties}
    for i, county in enumerate(shuffled[n_test:]):
        assignment_of_county[county] = i % k_folds

    fold_of: dict[str, int | str] = {}
    for zip_id in _eligible_zips(hierarchy, filter_threshold):
        fold_of[zip_id] = assignment_of_county[hierarchy.county_of[zip_id]]
    return SplitSpec(
        seed=seed,
        k_folds=k_folds,
        holdout_frac=holdout_frac,
        holdout_counties=test_counties,
        fold_of=fold_of,
        filter_threshold=filter_threshold,
    )


def state_grouped_folds(
    hierarchy: RegionHierarchy,
    seed: int,
    k_folds: int = 10,
    filter_threshold: int | None = None,
) -> SplitSpec:
    """Deal whole states into K fold groups for cross-state validation.

    With 49 state-level regions and K=10 this yields nine groups of five
    states and one group of four.
    """
    states = list(hierarchy.states)
    if k_folds < 2:
        raise ValidationError("k_folds must be >= 2")
    if len(states) < k_folds:
        raise TooFewStates(f"{len(states)} states cannot fill {k_folds} groups")
    shuffled = seeded_shuffle(states, seed, "state_grouped")
    group_of_state = {s: i % k_folds for i, s in enumerate(shuffled)}

    fold_of: dict[str, int | str] = {}
    for zip_id in _eligible_zips(hierarchy, filter_threshold):
        fold_of[zip_id] = group_of_state[hierarchy.state_of(zip_id)]
    return SplitSpec(
        seed=seed,
        k_folds=k_folds,
        holdout_frac=0.0,
        holdout_counties=frozenset(),
        fold_of=fold_of,
        filter_threshold=filter_threshold,
    )


# --- geometry ----------------------------------------------------------------

def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; accepts scalars or numpy arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=float)) for x in (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    if np.ndim(d) == 0:
        return float(d)
    return d


def centroid_arrays(hierarchy: RegionHierarchy, zip_ids: Sequence[str]):
    """(lat, lon) float arrays for the given zips, in the given order."""
    lats = np.array([hierarchy.record(z).lat for z in zip_ids], dtype=float)
    lons = np.array([hierarchy.record(z).lon for z in zip_ids], dtype=float)
    return lats, lons
