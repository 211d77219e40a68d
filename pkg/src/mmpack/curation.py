"""Quality-based subset selection and mixture accounting.

Operations here are streaming: they take sample iterators, yield sample
iterators, and never rewrite image bytes or captions.  Counters that a
caller may want (kept/dropped, coverage) are filled into optional stats
objects as the stream is consumed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator, Mapping, Sequence

from .errors import ContractViolation, StructuralError

if TYPE_CHECKING:
    from .ingest import CaptionSample, Shard

# Metric names for the MLM-based filter (0-100 scale) plus CLIP similarity.
ITM = "itm"
ODF = "odf"
CTQ = "ctq"
SU = "su"
CLIP = "clip"
MLM_FILTER_METRICS = frozenset({ITM, ODF, CTQ, SU})

_UIDSET_MAGIC = b"MMU1"


@dataclass(frozen=True)
class QualityScore:
    """A (metric, value) pair produced by an external filter model."""

    metric: str
    value: float

    def __post_init__(self):
        metric = self.metric.lower()
        if not metric:
            raise ContractViolation("score metric name must be non-empty")
        value = float(self.value)
        if metric in MLM_FILTER_METRICS and not 0.0 <= value <= 100.0:
            raise ContractViolation(
                f"{metric} score must be within [0, 100], got {value}"
            )
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "value", value)


def parse_score_fields(obj: Mapping[str, object]) -> dict[str, float]:
    """Extract ``<metric>_score`` fields from a flat metadata object."""
    scores: dict[str, float] = {}
    for key, value in obj.items():
        if not key.endswith("_score"):
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ContractViolation(f"score field {key!r} is not numeric")
        qs = QualityScore(key[: -len("_score")], value)
        scores[qs.metric] = qs.value
    return scores


def score_fields(scores: Mapping[str, float]) -> dict[str, float]:
    """Inverse of parse_score_fields: metric map to ``<metric>_score`` fields."""
    return {f"{metric}_score": value for metric, value in scores.items()}


@dataclass
class FilterStats:
    kept: int = 0
    dropped: int = 0
    missing: int = 0


def filter_by_threshold(
    samples: Iterable[CaptionSample],
    metric: str,
    threshold: float,
    stats: FilterStats | None = None,
) -> Iterator[CaptionSample]:
    """Keep samples whose score for ``metric`` is >= threshold (inclusive).

    Samples lacking the metric were never scored and are dropped, counted
    under ``stats.missing``.  Order is preserved.
    """
    stats = stats if stats is not None else FilterStats()
    metric = metric.lower()
    for sample in samples:
        value = sample.scores.get(metric)
        if value is None:
            stats.missing += 1
        elif value >= threshold:
            stats.kept += 1
            yield sample
        else:
            stats.dropped += 1


@dataclass
class CoverageStats:
    keep_size: int = 0
    matched: int = 0
    unmatched: set[str] = field(default_factory=set)


def select_by_uid_set(
    shards: Iterable[Shard],
    keep: set[str],
    stats: CoverageStats | None = None,
) -> Iterator[CaptionSample]:
    """Yield samples whose uid is in ``keep``, in stream order.

    After the stream is exhausted, ``stats.unmatched`` holds the keep-set
    uids that never appeared in any shard.
    """
    stats = stats if stats is not None else CoverageStats()
    stats.keep_size = len(keep)
    matched_uids: set[str] = set()
    for shard in shards:
        for sample in shard.samples:
            if sample.uid in keep:
                stats.matched += 1
                matched_uids.add(sample.uid)
                yield sample
    stats.unmatched = keep - matched_uids


def union_dedup(
    a: Iterable[CaptionSample], b: Iterable[CaptionSample]
) -> Iterator[CaptionSample]:
    """Union of two sample streams with uid-exact dedup, first copy wins.

    All of ``a`` passes through (minus its own internal duplicates), then
    the samples of ``b`` whose uid has not been seen.  Only uids are held
    in memory, never payloads, so corpus-scale unions stay cheap.
    """
    seen: set[str] = set()
    for stream in (a, b):
        for sample in stream:
            if sample.uid not in seen:
                seen.add(sample.uid)
                yield sample


@dataclass
class AttachStats:
    attached: int = 0
    unmatched_rows: int = 0


def attach_scores(
    samples: Iterable[CaptionSample],
    scores: Mapping[str, Sequence[QualityScore]],
    stats: AttachStats | None = None,
) -> Iterator[CaptionSample]:
    """Merge externally produced scores onto matching samples.

    A new value for an already-present metric overwrites it.  Table rows
    whose uid never appears in the stream are counted after exhaustion.
    """
    stats = stats if stats is not None else AttachStats()
    used: set[str] = set()
    for sample in samples:
        rows = scores.get(sample.uid)
        if rows:
            used.add(sample.uid)
            stats.attached += 1
            merged = dict(sample.scores)
            for qs in rows:
                merged[qs.metric] = qs.value
            yield replace(sample, scores=merged)
        else:
            yield sample
    stats.unmatched_rows = len(scores) - len(used)


@dataclass(frozen=True)
class MixtureEntry:
    source: str
    filter_desc: str
    count: float

    def __post_init__(self):
        if self.count < 0:
            raise ContractViolation(f"mixture count must be >= 0, got {self.count}")


@dataclass
class MixtureSpec:
    """Named dataset sources with target counts."""

    entries: list[MixtureEntry]


@dataclass
class MixtureReport:
    rows: list[tuple[str, float, float]]  # (source, count, fraction)
    total: float

    def render(self) -> str:
        lines = [f"{'source':<24} {'count':>16} {'fraction':>10}"]
        for source, count, fraction in self.rows:
            lines.append(f"{source:<24} {count:>16g} {fraction:>10.4f}")
        lines.append(f"{'total':<24} {self.total:>16g} {1.0 if self.total else 0.0:>10.4f}")
        return "\n".join(lines)


def mixture_report(
    corpora: Sequence[tuple[str, float]] | MixtureSpec,
) -> MixtureReport:
    """Per-source counts and fractions of the combined corpus."""
    if isinstance(corpora, MixtureSpec):
        pairs = [(e.source, e.count) for e in corpora.entries]
    else:
        pairs = list(corpora)
    for name, count in pairs:
        if count < 0:
            raise ContractViolation(f"mixture count for {name!r} must be >= 0")
    total = float(sum(count for _, count in pairs))
    rows = [
        (name, float(count), float(count) / total if total else 0.0)
        for name, count in pairs
    ]
    return MixtureReport(rows, total)


def load_uid_set(path: str | Path) -> set[str]:
    """Load a uid set from a text (one per line) or binary (MMU1) file."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head == _UIDSET_MAGIC:
            return _read_binary_uids(fh, path)
    ids: set[str] = set()
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                uid = line.strip()
                if uid:
                    ids.add(uid)
    except UnicodeDecodeError as exc:
        raise StructuralError(f"{path}: neither a text nor an MMU1 uid set: {exc}") from exc
    return ids


def _read_binary_uids(fh, path: Path) -> set[str]:
    raw = fh.read(8)
    if len(raw) != 8:
        raise StructuralError(f"{path}: truncated uid-set header")
    (count,) = struct.unpack("<Q", raw)
    ids: set[str] = set()
    for i in range(count):
        raw = fh.read(2)
        if len(raw) != 2:
            raise StructuralError(f"{path}: truncated uid length at entry {i}")
        (n,) = struct.unpack("<H", raw)
        blob = fh.read(n)
        if len(blob) != n:
            raise StructuralError(f"{path}: truncated uid bytes at entry {i}")
        ids.add(blob.decode("utf-8"))
    return ids


def save_uid_set(ids: set[str], path: str | Path, binary: bool = False) -> None:
    """Write a uid set; entries are sorted so output is deterministic."""
    ordered = sorted(ids)
    if binary:
        with open(path, "wb") as fh:
            fh.write(_UIDSET_MAGIC)
            fh.write(struct.pack("<Q", len(ordered)))
            for uid in ordered:
                blob = uid.encode("utf-8")
                fh.write(struct.pack("<H", len(blob)))
                fh.write(blob)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            for uid in ordered:
                fh.write(uid + "\n")


def load_score_table(path: str | Path) -> dict[str, list[QualityScore]]:
    """Load newline-delimited score records: ``{"uid": ..., "<metric>_score": ...}``."""
    path = Path(path)
    table: dict[str, list[QualityScore]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("not an object")
                uid = obj["uid"]
                if not isinstance(uid, str) or not uid:
                    raise ValueError("bad uid")
                scores = parse_score_fields(obj)
            except (ValueError, KeyError, ContractViolation) as exc:
                raise StructuralError(f"{path}:{lineno}: bad score record: {exc}") from exc
            table.setdefault(uid, []).extend(
                QualityScore(metric, value) for metric, value in scores.items()
            )
    return table
