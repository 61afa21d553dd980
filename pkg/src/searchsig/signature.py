"""Search-signature construction.

A region's search signature is a fixed-length nonnegative vector over a
shared ranked vocabulary of popular queries, scaled so the entries sum to
100. Construction runs: per-region top-query extraction (count floor, then
top-K by count), vocabulary ranking by region coverage, vectorization of
in-vocabulary counts, sparsity filtering, and hierarchical median fill for
regions without usable signatures.

Operations accept either lists of row records (``.region_id``,
``.query_text``, ``.count`` attributes) or a pre-built columnar
:class:`QueryLog`; the columnar form is what the batch pipeline uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .errors import (
    BadDimension,
    DuplicateKey,
    EmptyCounty,
    EmptyInput,
    NoObservedSignatures,
    UnknownRegion,
)
from .spatial import RegionHierarchy

OBSERVED = "observed"
MEDIAN_FILLED = "median_filled"
ABSENT = "absent"

SUM_TOLERANCE = 1e-6


class QueryLog:
    """Columnar query-count table: one sparse counts matrix, sorted axes."""

    def __init__(self, region_ids: Sequence[str], query_texts: Sequence[str], counts: sparse.csr_matrix):
        self.region_ids = tuple(region_ids)
        self.query_texts = tuple(query_texts)
        self.counts = counts.tocsr()
        self._region_pos = {r: i for i, r in enumerate(self.region_ids)}
        self._query_pos = {q: i for i, q in enumerate(self.query_texts)}

    @classmethod
    def from_records(cls, records: Iterable) -> "QueryLog":
        rows = list(records)
        regions = sorted({r.region_id for r in rows})
        queries = sorted({r.query_text for r in rows})
        rpos = {r: i for i, r in enumerate(regions)}
        qpos = {q: i for i, q in enumerate(queries)}
        seen: set[tuple[str, str]] = set()
        ii = np.empty(len(rows), dtype=np.int64)
        jj = np.empty(len(rows), dtype=np.int64)
        vv = np.empty(len(rows), dtype=np.int64)
        for k, rec in enumerate(rows):
            key = (rec.region_id, rec.query_text)
            if key in seen:
                raise DuplicateKey(*key)
            seen.add(key)
            ii[k], jj[k], vv[k] = rpos[rec.region_id], qpos[rec.query_text], rec.count
        counts = sparse.csr_matrix(
            (vv, (ii, jj)), shape=(len(regions), len(queries)), dtype=np.int64
        )
        return cls(regions, queries, counts)

    def region_counts(self, region_id: str) -> dict[str, int]:
        """Nonzero query counts for one region."""
        i = self._region_pos.get(region_id)
        if i is None:
            return {}
        row = self.counts.getrow(i)
        return {self.query_texts[j]: int(v) for j, v in zip(row.indices, row.data)}

    def iter_records(self):
        """Rows as (region_id, query_text, count) tuples in canonical order."""
        indptr, indices, data = self.counts.indptr, self.counts.indices, self.counts.data
        for i, region in enumerate(self.region_ids):
            for k in range(indptr[i], indptr[i + 1]):
                yield LogRow(region, self.query_texts[indices[k]], int(data[k]))

    def __len__(self) -> int:
        return len(self.region_ids)


def _as_query_log(log) -> QueryLog:
    return log if isinstance(log, QueryLog) else QueryLog.from_records(log)


@dataclass(frozen=True)
class VocabEntry:
    feature_index: int
    query_text: str
    region_coverage: int
    total_count: int


@dataclass(frozen=True)
class Vocabulary:
    """Ranked query list defining the signature's feature axes."""

    entries: tuple[VocabEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def query_texts(self) -> list[str]:
        return [e.query_text for e in self.entries]


@dataclass
class SearchSignature:
    region_id: str
    values: np.ndarray
    status: str

    def zero_fraction(self) -> float:
        if self.values.size == 0:
            return 1.0
        return float(np.count_nonzero(self.values == 0.0)) / self.values.size


class SignatureSet:
    """Signatures for a fixed region list, stored as one dense matrix."""

    def __init__(self, region_ids: Sequence[str], matrix: np.ndarray, status: Sequence[str]):
        order = np.argsort(np.asarray(region_ids, dtype=object))
        self.region_ids = tuple(np.asarray(region_ids, dtype=object)[order])
        self.matrix = np.asarray(matrix, dtype=float)[order]
        self.status = np.asarray(status, dtype=object)[order]
        self._pos = {r: i for i, r in enumerate(self.region_ids)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.region_ids)

    def __contains__(self, region_id: str) -> bool:
        return region_id in self._pos

    def get(self, region_id: str) -> SearchSignature:
        i = self._pos[region_id]
        return SearchSignature(region_id, self.matrix[i].copy(), str(self.status[i]))

    def __iter__(self):
        for i, r in enumerate(self.region_ids):
            yield SearchSignature(r, self.matrix[i].copy(), str(self.status[i]))

    def rows_for(self, region_ids: Sequence[str]) -> np.ndarray:
        idx = [self._pos[r] for r in region_ids]
        return self.matrix[idx]

    def status_of(self, region_id: str) -> str:
        return str(self.status[self._pos[region_id]])

    def non_absent_ids(self) -> list[str]:
        return [r for i, r in enumerate(self.region_ids) if self.status[i] != ABSENT]


# --- construction ops ---------------------------------------------------------

def top_queries_per_region(log, k_top: int, c_min: int) -> dict[str, set[str]]:
    """Per region: queries with count >= c_min, ranked by descending count
    then ascending text, truncated to the top k_top."""
    if k_top < 1:
        raise EmptyInput("k_top must be >= 1")
    if c_min < 0:
        raise EmptyInput("c_min must be >= 0")
    qlog = _as_query_log(log)
    out: dict[str, set[str]] = {}
    texts = np.asarray(qlog.query_texts, dtype=object)
    indptr, indices, data = qlog.counts.indptr, qlog.counts.indices, qlog.counts.data
    for i, region in enumerate(qlog.region_ids):
        lo, hi = indptr[i], indptr[i + 1]
        cols, vals = indices[lo:hi], data[lo:hi]
        keep = vals >= c_min
        cols, vals = cols[keep], vals[keep]
        if cols.size > k_top:
            # stable sort on (-count, text): text-ascending presort, then counts
            text_order = np.argsort(texts[cols])
            cols, vals = cols[text_order], vals[text_order]
            by_count = np.argsort(-vals, kind="stable")[:k_top]
            cols = cols[by_count]
        out[region] = {str(texts[c]) for c in cols}
    return out


def build_vocabulary(top_sets: Mapping[str, set[str]], full_log, v: int) -> Vocabulary:
    """Rank queries by the number of regions whose top-set contains them.

    Coverage ties break by descending total count over the full log, then
    ascending query text. Truncated to at most ``v`` entries.
    """
    if not top_sets:
        raise EmptyInput("no per-region top query sets")
    if v < 1:
        raise EmptyInput("vocabulary size must be >= 1")
    coverage: dict[str, int] = {}
    for queries in top_sets.values():
        for q in queries:
            coverage[q] = coverage.get(q, 0) + 1
    if not coverage:
        raise EmptyInput("all top query sets are empty")
    qlog = _as_query_log(full_log)
    totals_arr = np.asarray(qlog.counts.sum(axis=0)).ravel()
    totals = {q: int(totals_arr[j]) for j, q in enumerate(qlog.query_texts)}
    ranked = sorted(coverage, key=lambda q: (-coverage[q], -totals.get(q, 0), q))[:v]
    entries = tuple(
        VocabEntry(i, q, coverage[q], totals.get(q, 0)) for i, q in enumerate(ranked)
    )
    return Vocabulary(entries)


def vectorize_region(region_id: str, counts: Mapping[str, int], vocab: Vocabulary) -> SearchSignature:
    """Signature of one region: in-vocabulary counts scaled to sum 100.

    A region with no in-vocabulary activity gets the zero vector and
    status ``absent``.
    """
    if len(vocab) == 0:
        raise EmptyInput("vocabulary is empty")
    raw = np.array([float(counts.get(e.query_text, 0)) for e in vocab.entries])
    total = raw.sum()
    if total > 0:
        return SearchSignature(region_id, raw * (100.0 / total), OBSERVED)
    return SearchSignature(region_id, np.zeros(len(vocab)), ABSENT)


def sparsity_filter(sig: SearchSignature, threshold: float) -> bool:
    """True when the signature is usable: zero fraction not above threshold."""
    if not (0.0 < threshold < 1.0):
        raise EmptyInput("sparsity threshold must be in (0, 1)")
    return sig.zero_fraction() <= threshold


def build_signatures(
    log,
    manifest,
    regions: Sequence[str] | None = None,
) -> tuple[Vocabulary, SignatureSet]:
    """Full vectorization pass: top sets, vocabulary, normalized matrix.

    ``regions`` fixes the output region list (regions missing from the log
    become ``absent``); log regions outside it are an error. Signatures
    whose zero fraction exceeds the manifest's sparsity threshold are
    demoted to ``absent`` with a zero vector.
    """
    qlog = _as_query_log(log)
    if regions is None:
        region_list = list(qlog.region_ids)
    else:
        region_list = sorted(regions)
        known = set(region_list)
        for r in qlog.region_ids:
            if r not in known:
                raise UnknownRegion(r)
    top_sets = top_queries_per_region(qlog, manifest.per_region_top, manifest.min_count)
    vocab = build_vocabulary(top_sets, qlog, manifest.vocab_size)

    cols = [qlog._query_pos[q] for q in vocab.query_texts]
    sub = np.asarray(qlog.counts[:, cols].todense(), dtype=float)
    matrix = np.zeros((len(region_list), len(vocab)))
    pos = {r: i for i, r in enumerate(region_list)}
    for i, r in enumerate(qlog.region_ids):
        matrix[pos[r]] = sub[i]

    totals = matrix.sum(axis=1)
    status = np.full(len(region_list), ABSENT, dtype=object)
    nonzero = totals > 0
    matrix[nonzero] *= 100.0 / totals[nonzero, None]
    status[nonzero] = OBSERVED

    if len(vocab) > 0:
        zero_frac = (matrix == 0.0).sum(axis=1) / float(len(vocab))
        demote = zero_frac > manifest.sparsity_threshold
        matrix[demote] = 0.0
        status[demote] = ABSENT
    return vocab, SignatureSet(region_list, matrix, status)


def median_fill(signatures: SignatureSet, hierarchy: RegionHierarchy) -> SignatureSet:
    """Fill absent signatures with per-feature medians of observed peers.

    Fill source is the parent county's observed signatures, falling back to
    the state and then to all observed signatures nationally. Fill vectors
    are rescaled to sum 100; an all-zero fill leaves the region absent.
    """
    status = signatures.status.copy()
    matrix = signatures.matrix.copy()
    observed = status == OBSERVED
    if not observed.any():
        raise NoObservedSignatures("no observed signatures to fill from")

    county_rows: dict[str, list[int]] = {}
    state_rows: dict[str, list[int]] = {}
    for i, region in enumerate(signatures.region_ids):
        if not observed[i]:
            continue
        county = hierarchy.county_of[region]
        county_rows.setdefault(county, []).append(i)
        state_rows.setdefault(hierarchy.state_of_county[county], []).append(i)
    national = np.median(matrix[observed], axis=0)
    county_median = {c: np.median(matrix[rows], axis=0) for c, rows in county_rows.items()}
    state_median = {s: np.median(matrix[rows], axis=0) for s, rows in state_rows.items()}

    for i, region in enumerate(signatures.region_ids):
        if status[i] != ABSENT:
            continue
        county = hierarchy.county_of[region]
        state = hierarchy.state_of_county[county]
        fill = county_median.get(county)
        if fill is None:
            fill = state_median.get(state)
        if fill is None:
            fill = national
        total = fill.sum()
        if total > 0:
            matrix[i] = fill * (100.0 / total)
            status[i] = MEDIAN_FILLED
    return SignatureSet(signatures.region_ids, matrix, status)


def aggregate_to_county(signatures: SignatureSet, hierarchy: RegionHierarchy) -> dict[str, np.ndarray]:
    """Unweighted mean of each county's non-absent member signatures."""
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for i, region in enumerate(signatures.region_ids):
        if signatures.status[i] == ABSENT:
            continue
        county = hierarchy.county_of[region]
        if county in sums:
            sums[county] += signatures.matrix[i]
            counts[county] += 1
        else:
            sums[county] = signatures.matrix[i].copy()
            counts[county] = 1
    for county in hierarchy.counties:
        if county not in sums:
            raise EmptyCounty(county)
    return {c: sums[c] / counts[c] for c in sorted(sums)}


def truncate_features(signatures: SignatureSet, d: int) -> SignatureSet:
    """Keep the first ``d`` vocabulary-ranked features, without rescaling."""
    if not (1 <= d <= signatures.dim):
        raise BadDimension(f"dimension {d} outside [1, {signatures.dim}]")
    return SignatureSet(
        signatures.region_ids, signatures.matrix[:, :d].copy(), signatures.status.copy()
    )
