"""Shard archive I/O for image-text caption samples.

A shard is a tar archive holding, per sample, an image entry
``<uid>.<ext>``, a caption entry ``<uid>.txt`` and an optional metadata
entry ``<uid>.json`` (flat object: string ``uid`` plus numeric
``<metric>_score`` fields).  Sample order follows first appearance of a
uid; entry order within a sample is not significant.
"""

from __future__ import annotations

import io
import json
import re
import tarfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from PIL import Image

from .curation import parse_score_fields, score_fields
from .errors import ContractViolation, StructuralError

# Codec tags are stable across the wire format; see FORMAT.md for the registry.
CODEC_TAGS = {"jpeg": 1, "png": 2, "webp": 3}
_EXT_TO_CODEC = {"jpg": "jpeg", "jpeg": "jpeg", "png": "png", "webp": "webp"}
_CODEC_TO_EXT = {"jpeg": "jpg", "png": "png", "webp": "webp"}

SHARD_CAPACITY = 10_000  # nominal samples per shard; the last shard may be short


@dataclass
class ImagePayload:
    """Encoded image bytes with codec tag and pixel dimensions."""

    data: bytes
    codec: str
    width: int
    height: int

    def __post_init__(self):
        if self.codec not in CODEC_TAGS:
            raise ContractViolation(f"unknown image codec {self.codec!r}")
        if self.width < 1 or self.height < 1:
            raise ContractViolation(
                f"image dimensions must be >= 1, got {self.width}x{self.height}"
            )


@dataclass
class CaptionSample:
    """One uid'd image + caption pair, optionally carrying quality scores."""

    uid: str
    image: ImagePayload
    caption: str
    scores: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.uid:
            raise ContractViolation("sample uid must be non-empty")


@dataclass
class Shard:
    """An ordered batch of samples; nominal capacity is 10k."""

    shard_id: int
    samples: list[CaptionSample] = field(default_factory=list)

    def __post_init__(self):
        if self.shard_id < 0:
            raise ContractViolation(f"shard_id must be >= 0, got {self.shard_id}")

    def uids(self) -> list[str]:
        return [s.uid for s in self.samples]


@dataclass(frozen=True)
class ResizePolicy:
    """Ingestion-time resize rule: bring the smaller image side to a target."""

    target_smaller_side: int = 512
    upscale: bool = False

    def __post_init__(self):
        if self.target_smaller_side < 1:
            raise ContractViolation("target_smaller_side must be >= 1")


@dataclass(frozen=True)
class SkippedEntry:
    uid: str
    reason: str


class ShardRead(NamedTuple):
    shard: Shard
    skipped: list[SkippedEntry]


def shard_id_from_path(path: str | Path) -> int:
    """Trailing digit run in the file stem, or 0 when the name carries none."""
    stem = Path(path).name.split(".", 1)[0]
    match = re.search(r"(\d+)$", stem)
    return int(match.group(1)) if match else 0


def probe_dims(data: bytes) -> tuple[int, int]:
    """Width and height of an encoded image, read from its header only."""
    with Image.open(io.BytesIO(data)) as img:
        return img.size


def read_shard(path: str | Path) -> ShardRead:
    """Read a shard archive, skipping incomplete samples.

    Samples missing an image or a caption (or with undecodable payloads
    or metadata) are not fatal: they are dropped and listed in the
    returned skip report.  A malformed archive raises StructuralError.
    """
    path = Path(path)
    order: list[str] = []
    groups: dict[str, dict] = {}
    try:
        with tarfile.open(path, "r:*") as tar:
            for member in tar:
                if not member.isfile():
                    continue
                name = member.name.rsplit("/", 1)[-1]
                uid, _, ext = name.rpartition(".")
                if not uid:
                    uid, ext = name, ""
                if uid not in groups:
                    groups[uid] = {}
                    order.append(uid)
                group = groups[uid]
                fileobj = tar.extractfile(member)
                if fileobj is None:
                    raise StructuralError(f"{path}: unreadable entry {member.name!r}")
                data = fileobj.read()
                ext = ext.lower()
                if ext == "txt":
                    group.setdefault("caption", data)
                elif ext == "json":
                    group.setdefault("meta", data)
                elif ext in _EXT_TO_CODEC:
                    group.setdefault("image", (_EXT_TO_CODEC[ext], data))
    except tarfile.TarError as exc:
        raise StructuralError(f"{path}: malformed archive: {exc}") from exc

    samples: list[CaptionSample] = []
    skipped: list[SkippedEntry] = []
    for uid in order:
        group = groups[uid]
        sample, reason = _build_sample(uid, group)
        if sample is None:
            skipped.append(SkippedEntry(uid, reason))
        else:
            samples.append(sample)
    return ShardRead(Shard(shard_id_from_path(path), samples), skipped)


def _build_sample(uid: str, group: dict) -> tuple[CaptionSample | None, str]:
    image = group.get("image")
    caption_bytes = group.get("caption")
    if image is None and caption_bytes is None:
        return None, "missing-image-and-caption"
    if image is None:
        return None, "missing-image"
    if caption_bytes is None:
        return None, "missing-caption"

    try:
        caption = caption_bytes.decode("utf-8")
    except UnicodeDecodeError:
        return None, "bad-caption"

    codec, data = image
    try:
        width, height = probe_dims(data)
    except Exception:
        return None, "undecodable-image"

    scores: dict[str, float] = {}
    meta = group.get("meta")
    if meta is not None:
        try:
            obj = json.loads(meta.decode("utf-8"))
            if not isinstance(obj, dict):
                raise ValueError("metadata is not an object")
            meta_uid = obj.get("uid")
            if meta_uid is not None and meta_uid != uid:
                return None, "uid-mismatch"
            scores = parse_score_fields(obj)
        except (ValueError, ContractViolation):
            return None, "bad-metadata"

    payload = ImagePayload(data, codec, width, height)
    return CaptionSample(uid, payload, caption, scores), ""


def write_shard(shard: Shard, path: str | Path) -> None:
    """Write a shard as a deterministic tar archive.

    Entry bytes depend only on the shard contents (fixed mtime/owner), so
    equal shards always produce byte-identical archives.
    """
    _validate_shard(shard)
    path = Path(path)
    with tarfile.open(path, "w", format=tarfile.GNU_FORMAT) as tar:
        for sample in shard.samples:
            ext = _CODEC_TO_EXT[sample.image.codec]
            _add_entry(tar, f"{sample.uid}.{ext}", sample.image.data)
            _add_entry(tar, f"{sample.uid}.txt", sample.caption.encode("utf-8"))
            if sample.scores:
                meta = {"uid": sample.uid, **score_fields(sample.scores)}
                blob = json.dumps(meta, sort_keys=True).encode("utf-8")
                _add_entry(tar, f"{sample.uid}.json", blob)


def _add_entry(tar: tarfile.TarFile, name: str, data: bytes) -> None:
    info = tarfile.TarInfo(name)
    info.size = len(data)
    info.mtime = 0
    info.mode = 0o644
    info.uid = info.gid = 0
    info.uname = info.gname = ""
    tar.addfile(info, io.BytesIO(data))


def _validate_shard(shard: Shard) -> None:
    seen: set[str] = set()
    for sample in shard.samples:
        if sample.uid in seen:
            raise ContractViolation(f"duplicate uid {sample.uid!r} in shard {shard.shard_id}")
        seen.add(sample.uid)


def resize_dims(width: int, height: int, policy: ResizePolicy) -> tuple[int, int]:
    """Dimensions after applying the smaller-side resize policy.

    The smaller side lands exactly on the target; the longer side scales
    proportionally, rounded half away from zero (never below 1).  Inputs
    already at or below the target pass through unless upscaling is on.
    """
    if width < 1 or height < 1:
        raise ContractViolation(f"dimensions must be >= 1, got {width}x{height}")
    target = policy.target_smaller_side
    smaller, longer = min(width, height), max(width, height)
    if smaller == target or (smaller < target and not policy.upscale):
        return width, height
    # Round(longer * target / smaller) half away from zero, in exact
    # integer arithmetic.
    scaled = max(1, (2 * longer * target + smaller) // (2 * smaller))
    if width <= height:
        return target, scaled
    return scaled, target
