"""Readers and writers for every on-disk table.

File format is strict by design: comma-delimited UTF-8 with a mandatory
header, ``\\n`` line endings, and no quoting (fields must not contain
commas or newlines; a loader error otherwise). Floats are serialized with
6 significant digits everywhere, so re-running a writer on identical
inputs yields byte-identical files. All writes are atomic (temp file in
the target directory, then rename).
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateKey,
    IncompleteReport,
    IoFailure,
    MalformedRow,
    MissingFile,
    NonFiniteValue,
    NonNumericCount,
    UnknownRegion,
    ValidationError,
)
from .signature import SignatureSet, VocabEntry, Vocabulary
from .spatial import TEST, OverlapRow, SplitSpec, ZipRecord

# --- formatting ----------------------------------------------------------------


def fmt_float(x: float) -> str:
    """Fixed 6-significant-digit rendering, always valid in CSV and JSON."""
    x = float(x)
    if not math.isfinite(x):
        raise ValidationError(f"cannot serialize non-finite value {x!r}")
    if x == 0.0:
        x = 0.0  # normalize -0.0
    s = format(x, "#.6g")
    if s.endswith("."):
        s += "0"
    return s


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"failed writing {path}: {exc}") from exc


# --- low-level CSV -------------------------------------------------------------


def _read_lines(path: str | Path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    text = path.read_text(encoding="utf-8")
    if "\r" in text:
        raise MalformedRow(1 + text[: text.index("\r")].count("\n"),
                           "carriage return found; files must use \\n endings")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _check_header(lines: list[str], expected: str, path) -> None:
    if not lines:
        raise MalformedRow(1, f"{path}: empty file, expected header {expected!r}")
    if lines[0] != expected:
        raise MalformedRow(1, f"{path}: bad header {lines[0]!r}, expected {expected!r}")


def _split_row(line: str, n_fields: int, line_no: int) -> list[str]:
    parts = line.split(",")
    if len(parts) != n_fields:
        raise MalformedRow(line_no, f"expected {n_fields} fields, got {len(parts)}")
    return parts


def _write_csv(path, header: str, rows: Iterable[Sequence[str]]) -> None:
    out = [header]
    for row in rows:
        for cell in row:
            if "," in cell or "\n" in cell or "\r" in cell:
                raise ValidationError(f"field {cell!r} contains a delimiter or newline")
        out.append(",".join(row))
    atomic_write_text(path, "\n".join(out) + "\n")


# --- query log -------------------------------------------------------------------

QUERY_LOG_HEADER = "region_id,query_text,count"


@dataclass(frozen=True)
class QueryLogRecord:
    """One (region, query, count) row of a query log."""

    region_id: str
    query_text: str
    count: int


@dataclass(frozen=True)
class DatasetManifest:
    """Constants governing signature construction for one dataset build."""

    time_window: str = "synthetic"
    vocab_size: int = 1000
    per_region_top: int = 500
    min_count: int = 20
    sparsity_threshold: float = 0.98
    seed: int = 0

    def validate(self) -> None:
        if self.vocab_size < 1 or self.per_region_top < 1 or self.min_count < 0:
            raise ValidationError("manifest sizes must satisfy V>=1, K_top>=1, C_min>=0")
        if not (0.0 < self.sparsity_threshold < 1.0):
            raise ValidationError("sparsity threshold must be in (0, 1)")


def canonicalize_query(text: str) -> str:
    """Trim surrounding whitespace and case-fold before uniqueness checks."""
    return text.strip().casefold()


def load_query_log(path, manifest: DatasetManifest | None = None) -> list[QueryLogRecord]:
    """Load and validate a query log; returns records sorted canonically.

    Counts below the manifest's per-region floor are retained here; the
    floor applies later, per region, during signature construction.
    """
    lines = _read_lines(path)
    _check_header(lines, QUERY_LOG_HEADER, path)
    records = []
    seen: set[tuple[str, str]] = set()
    for line_no, line in enumerate(lines[1:], start=2):
        region_id, query_raw, count_raw = _split_row(line, 3, line_no)
        if len(region_id) != 5 or not region_id.isdigit():
            raise MalformedRow(line_no, f"region id {region_id!r} is not a 5-digit code")
        query = canonicalize_query(query_raw)
        if not query:
            raise MalformedRow(line_no, "empty query text")
        try:
            count = int(count_raw)
        except ValueError:
            raise NonNumericCount(line_no, count_raw) from None
        if count < 0:
            raise MalformedRow(line_no, f"negative count {count}")
        key = (region_id, query)
        if key in seen:
            raise DuplicateKey(region_id, query)
        seen.add(key)
        records.append(QueryLogRecord(region_id, query, count))
    records.sort(key=lambda r: (r.region_id, r.query_text))
    return records


def write_query_log(log, path) -> None:
    """Write records (or anything with ``.iter_records()``) in canonical order."""
    records = log.iter_records() if hasattr(log, "iter_records") else log
    rows = sorted(
        ((r.region_id, r.query_text, str(int(r.count))) for r in records),
        key=lambda t: (t[0], t[1]),
    )
    _write_csv(path, QUERY_LOG_HEADER, rows)


# --- labels ----------------------------------------------------------------------

LABELS_HEADER = "region_id,value"


@dataclass
class LabelTable:
    """Region -> value map for one variable at one geographic level."""

    variable: str
    level: str  # "zip" | "county"
    values: dict[str, float]
    unit: str = ""
    skipped: int = 0

    def __post_init__(self) -> None:
        if self.level not in ("zip", "county"):
            raise ValidationError(f"label level {self.level!r} must be zip or county")


def load_labels(
    path,
    variable: str,
    level: str = "zip",
    known_regions: set[str] | None = None,
    unit: str = "",
) -> LabelTable:
    """Load a label table; empty value cells are skipped and counted."""
    lines = _read_lines(path)
    _check_header(lines, LABELS_HEADER, path)
    values: dict[str, float] = {}
    skipped = 0
    for line_no, line in enumerate(lines[1:], start=2):
        region_id, value_raw = _split_row(line, 2, line_no)
        if region_id in values:
            raise DuplicateKey(region_id, variable)
        if known_regions is not None and region_id not in known_regions:
            raise UnknownRegion(region_id)
        if value_raw == "":
            skipped += 1
            continue
        try:
            value = float(value_raw)
        except ValueError:
            raise NonFiniteValue(line_no, value_raw) from None
        if not math.isfinite(value):
            raise NonFiniteValue(line_no, value_raw)
        values[region_id] = value
    return LabelTable(variable=variable, level=level, values=values, unit=unit, skipped=skipped)


def write_labels(table: LabelTable, path) -> None:
    rows = [(r, fmt_float(v)) for r, v in sorted(table.values.items())]
    _write_csv(path, LABELS_HEADER, rows)


# --- geography and overlaps --------------------------------------------------------

GEOGRAPHY_HEADER = "zip_id,county_fips,state_fips,lat,lon,population,land_area_km2"
OVERLAPS_HEADER = "zip_id,county_fips,overlap_km2"


def load_geography(path) -> list[ZipRecord]:
    lines = _read_lines(path)
    _check_header(lines, GEOGRAPHY_HEADER, path)
    records = []
    for line_no, line in enumerate(lines[1:], start=2):
        zip_id, county, state, lat, lon, pop, area = _split_row(line, 7, line_no)
        try:
            records.append(
                ZipRecord(zip_id, county, state, float(lat), float(lon), int(pop), float(area))
            )
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc)) from None
    return records


def write_geography(records: Sequence[ZipRecord], path) -> None:
    rows = [
        (
            r.zip_id, r.county_fips, r.state_fips,
            fmt_float(r.lat), fmt_float(r.lon),
            str(int(r.population)), fmt_float(r.land_area_km2),
        )
        for r in sorted(records, key=lambda r: r.zip_id)
    ]
    _write_csv(path, GEOGRAPHY_HEADER, rows)


def load_overlaps(path) -> list[OverlapRow]:
    lines = _read_lines(path)
    _check_header(lines, OVERLAPS_HEADER, path)
    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        zip_id, county, overlap = _split_row(line, 3, line_no)
        try:
            rows.append(OverlapRow(zip_id, county, float(overlap)))
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc)) from None
    return rows


def write_overlaps(rows: Sequence[OverlapRow], path) -> None:
    ordered = sorted(rows, key=lambda r: (r.zip_id, r.county_fips))
    _write_csv(
        path, OVERLAPS_HEADER,
        [(r.zip_id, r.county_fips, fmt_float(r.overlap_km2)) for r in ordered],
    )


# --- vocabulary and signatures ------------------------------------------------------

VOCAB_HEADER = "feature_index,query_text,region_coverage,total_count"


def load_vocabulary(path) -> Vocabulary:
    lines = _read_lines(path)
    _check_header(lines, VOCAB_HEADER, path)
    entries = []
    for line_no, line in enumerate(lines[1:], start=2):
        idx, text, coverage, total = _split_row(line, 4, line_no)
        try:
            entries.append(VocabEntry(int(idx), text, int(coverage), int(total)))
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc)) from None
    for i, e in enumerate(entries):
        if e.feature_index != i:
            raise MalformedRow(i + 2, f"feature_index {e.feature_index} out of order")
    return Vocabulary(tuple(entries))


def write_vocabulary(vocab: Vocabulary, path) -> None:
    rows = [
        (str(e.feature_index), e.query_text, str(e.region_coverage), str(e.total_count))
        for e in vocab.entries
    ]
    _write_csv(path, VOCAB_HEADER, rows)


def _signatures_header(dim: int) -> str:
    return "region_id,status," + ",".join(f"f{i}" for i in range(dim))


def load_signatures(path) -> SignatureSet:
    lines = _read_lines(path)
    if not lines:
        raise MalformedRow(1, f"{path}: empty file")
    header = lines[0].split(",")
    if header[:2] != ["region_id", "status"]:
        raise MalformedRow(1, f"{path}: bad signatures header")
    dim = len(header) - 2
    if header != _signatures_header(dim).split(","):
        raise MalformedRow(1, f"{path}: feature columns must be f0..f{dim - 1}")
    region_ids, status, rows = [], [], []
    for line_no, line in enumerate(lines[1:], start=2):
        parts = _split_row(line, dim + 2, line_no)
        region_ids.append(parts[0])
        status.append(parts[1])
        try:
            rows.append([float(v) for v in parts[2:]])
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc)) from None
    return SignatureSet(region_ids, np.array(rows, dtype=float), status)


def write_signatures(signatures: SignatureSet, path) -> None:
    rows = []
    for i, region in enumerate(signatures.region_ids):
        rows.append(
            (region, str(signatures.status[i]))
            + tuple(fmt_float(v) for v in signatures.matrix[i])
        )
    _write_csv(path, _signatures_header(signatures.dim), rows)


# --- splits ----------------------------------------------------------------------

SPLIT_HEADER = "zip_id,assignment"
SPLIT_META_HEADER = "key,value"


def _assignment_token(a) -> str:
    return a if a == TEST else f"F{a}"


def _parse_assignment(token: str, line_no: int):
    if token == TEST:
        return TEST
    if token.startswith("F") and token[1:].isdigit():
        return int(token[1:])
    raise MalformedRow(line_no, f"bad assignment {token!r}")


def split_meta_path(split_path) -> Path:
    p = Path(split_path)
    return p.with_name(p.stem + "_meta" + p.suffix)


def write_split(split: SplitSpec, path) -> None:
    rows = [
        (zip_id, _assignment_token(split.fold_of[zip_id]))
        for zip_id in sorted(split.fold_of)
    ]
    _write_csv(path, SPLIT_HEADER, rows)
    meta = [
        ("seed", str(split.seed)),
        ("k_folds", str(split.k_folds)),
        ("holdout_frac", fmt_float(split.holdout_frac)),
        ("filter", "" if split.filter_threshold is None else str(split.filter_threshold)),
    ]
    _write_csv(split_meta_path(path), SPLIT_META_HEADER, meta)


def load_split(path, hierarchy=None) -> SplitSpec:
    """Load a split and its sidecar; holdout counties are re-derived from
    the hierarchy when one is given."""
    lines = _read_lines(path)
    _check_header(lines, SPLIT_HEADER, path)
    fold_of: dict[str, int | str] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        zip_id, token = _split_row(line, 2, line_no)
        if zip_id in fold_of:
            raise DuplicateKey(zip_id, "assignment")
        fold_of[zip_id] = _parse_assignment(token, line_no)

    meta_lines = _read_lines(split_meta_path(path))
    _check_header(meta_lines, SPLIT_META_HEADER, split_meta_path(path))
    meta = {}
    for line_no, line in enumerate(meta_lines[1:], start=2):
        key, value = _split_row(line, 2, line_no)
        meta[key] = value
    try:
        seed = int(meta["seed"])
        k_folds = int(meta["k_folds"])
        holdout_frac = float(meta["holdout_frac"])
        filt = int(meta["filter"]) if meta.get("filter") else None
    except (KeyError, ValueError) as exc:
        raise MalformedRow(1, f"bad split meta: {exc}") from None

    holdout = frozenset()
    if hierarchy is not None:
        holdout = frozenset(
            hierarchy.county_of[z] for z, a in fold_of.items() if a == TEST
        )
    return SplitSpec(
        seed=seed, k_folds=k_folds, holdout_frac=holdout_frac,
        holdout_counties=holdout, fold_of=fold_of, filter_threshold=filt,
    )


# --- reports -----------------------------------------------------------------------

REPORT_KEYS = (
    "task", "variable", "model", "filter", "seed", "lambda",
    "per_fold", "test_r2", "n_train", "n_test", "runtime_s",
)


def _json_scalar(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return fmt_float(value)
    return json.dumps(value, ensure_ascii=False)


def write_report(report, path) -> None:
    """Serialize an evaluation report with fixed key order and float format.

    Raises :class:`IncompleteReport` when the per-fold list is empty; every
    task populates at least one fold (single-split tasks report their one
    evaluation there).
    """
    per_fold = list(report.per_fold_r2)
    if not per_fold:
        raise IncompleteReport("per-fold results are empty")
    values = {
        "task": report.task,
        "variable": report.variable,
        "model": report.model,
        "filter": report.filter_threshold,
        "seed": report.seed,
        "lambda": report.lambda_ if report.lambda_ is not None else None,
        "per_fold": per_fold,
        "test_r2": report.test_r2,
        "n_train": report.n_train,
        "n_test": report.n_test,
        "runtime_s": float(report.runtime_s),
    }
    lines = ["{"]
    for i, key in enumerate(REPORT_KEYS):
        v = values[key]
        if key == "per_fold":
            rendered = "[" + ", ".join(fmt_float(x) for x in v) + "]"
        elif key in ("lambda", "test_r2", "runtime_s") and v is not None:
            rendered = fmt_float(v)
        else:
            rendered = _json_scalar(v)
        comma = "," if i < len(REPORT_KEYS) - 1 else ""
        lines.append(f'  "{key}": {rendered}{comma}')
    lines.append("}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_report(path):
    from .evaluation import EvalReport

    p = Path(path)
    if not p.exists():
        raise MissingFile(str(p))
    data = json.loads(p.read_text(encoding="utf-8"))
    return EvalReport(
        task=data["task"],
        variable=data["variable"],
        model=data["model"],
        filter_threshold=data["filter"],
        seed=data["seed"],
        lambda_=data["lambda"],
        per_fold_r2=list(data["per_fold"]),
        test_r2=data["test_r2"],
        n_train=data["n_train"],
        n_test=data["n_test"],
        runtime_s=data["runtime_s"],
    )


# --- generic deterministic JSON ------------------------------------------------------


def _render_json(value, indent: int) -> str:
    pad = "  " * indent
    if isinstance(value, dict):
        if not value:
            return "{}"
        parts = []
        for k in value:  # caller controls ordering
            parts.append(f'{pad}  {json.dumps(str(k))}: {_render_json(value[k], indent + 1)}')
        return "{\n" + ",\n".join(parts) + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        inner = ", ".join(_render_json(v, indent) for v in value)
        return "[" + inner + "]"
    if isinstance(value, float):
        return fmt_float(value)
    return _json_scalar(value)


def write_json(obj: Mapping, path, sort_keys: bool = True) -> None:
    """Deterministic JSON: sorted keys (optional), 6-significant-digit floats."""

    def order(o):
        if isinstance(o, dict):
            keys = sorted(o) if sort_keys else list(o)
            return {k: order(o[k]) for k in keys}
        if isinstance(o, (list, tuple)):
            return [order(v) for v in o]
        return o

    atomic_write_text(path, _render_json(order(obj), 0) + "\n")


def load_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise MissingFile(str(p))
    return json.loads(p.read_text(encoding="utf-8"))


def write_manifest(manifest: DatasetManifest, path) -> None:
    write_json(
        {
            "time_window": manifest.time_window,
            "vocab_size": manifest.vocab_size,
            "per_region_top": manifest.per_region_top,
            "min_count": manifest.min_count,
            "sparsity_threshold": manifest.sparsity_threshold,
            "seed": manifest.seed,
        },
        path,
    )


def load_manifest(path) -> DatasetManifest:
    data = load_json(path)
    try:
        manifest = DatasetManifest(
            time_window=str(data["time_window"]),
            vocab_size=int(data["vocab_size"]),
            per_region_top=int(data["per_region_top"]),
            min_count=int(data["min_count"]),
            sparsity_threshold=float(data["sparsity_threshold"]),
            seed=int(data["seed"]),
        )
    except KeyError as exc:
        raise ValidationError(f"manifest missing key {exc}") from None
    manifest.validate()
    return manifest
