"""Portable binary container for packed sequences (``.mmpk``).

Little-endian throughout.  A 16-byte header (magic ``MMPK``, version,
record count, context length, visual tokens per image) is followed by
records: sample lengths, raw token ids, image payloads, and a trailing
CRC-32 over every preceding byte of the record.  FORMAT.md documents the
layout byte by byte.
"""

from __future__ import annotations

import struct
import sys
import zlib
from array import array
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator

from .errors import ContractViolation, CorruptRecordError, FormatError
from .ingest import CODEC_TAGS
from .packer import EncodedImage, PackedSequence

MAGIC = b"MMPK"
VERSION = 1
_HEADER = struct.Struct("<4sHIIH")  # magic, version, record_count, context, visual
_TAG_TO_CODEC = {tag: name for name, tag in CODEC_TAGS.items()}

_NATIVE_U32_OK = array("I").itemsize == 4 and sys.byteorder == "little"


@dataclass(frozen=True)
class ContainerHeader:
    version: int
    record_count: int
    context_length: int
    visual_tokens_per_image: int


@dataclass
class VerifyReport:
    """Outcome of a full container scan; never raises, never mutates."""

    records_ok: int = 0
    corrupt_records: list[int] = field(default_factory=list)
    invariant_failures: list[tuple[int, str]] = field(default_factory=list)
    total_tokens: int = 0
    total_images: int = 0
    aborted: bool = False  # structure broke mid-file; later records unreachable
    error: str | None = None

    @property
    def clean(self) -> bool:
        return (
            not self.corrupt_records
            and not self.invariant_failures
            and not self.aborted
            and self.error is None
        )


def _u32s_to_bytes(values: list[int]) -> bytes:
    if _NATIVE_U32_OK:
        return array("I", values).tobytes()
    return struct.pack(f"<{len(values)}I", *values)


def _bytes_to_u32s(blob: bytes) -> list[int]:
    if _NATIVE_U32_OK:
        out = array("I")
        out.frombytes(blob)
        return out.tolist()
    return list(struct.unpack(f"<{len(blob) // 4}I", blob))


def write_container(
    seqs: list[PackedSequence],
    path: str | Path,
    *,
    context_length: int,
    visual_tokens_per_image: int,
) -> None:
    """Write sequences to a container file; byte-deterministic.

    All records are validated before a single byte is written, so an
    invariant violation never leaves a partial file behind.
    """
    for index, seq in enumerate(seqs):
        _validate_sequence(index, seq, context_length)

    header = _HEADER.pack(
        MAGIC, VERSION, len(seqs), context_length, visual_tokens_per_image
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for seq in seqs:
            fh.write(_encode_record(seq))


def _validate_sequence(index: int, seq: PackedSequence, context_length: int) -> None:
    if sum(seq.lengths) > context_length:
        raise ContractViolation(
            f"record {index}: lengths sum {sum(seq.lengths)} exceeds context {context_length}"
        )
    if any(n < 1 for n in seq.lengths):
        raise ContractViolation(f"record {index}: sample lengths must be >= 1")
    if seq.input_ids and not 0 <= min(seq.input_ids) <= max(seq.input_ids) < 2**32:
        raise ContractViolation(f"record {index}: token ids must fit in u32")
    for img in seq.images:
        if img.codec not in CODEC_TAGS:
            raise ContractViolation(f"record {index}: unknown codec {img.codec!r}")


def _encode_record(seq: PackedSequence) -> bytes:
    buf = bytearray()
    buf += struct.pack("<II", len(seq.lengths), len(seq.images))
    buf += _u32s_to_bytes(seq.lengths)
    buf += struct.pack("<I", len(seq.input_ids))
    buf += _u32s_to_bytes(seq.input_ids)
    for img in seq.images:
        buf += struct.pack("<BI", CODEC_TAGS[img.codec], len(img.data))
        buf += img.data
    buf += struct.pack("<I", zlib.crc32(buf))
    return bytes(buf)


def read_header(path: str | Path) -> ContainerHeader:
    """Parse and validate just the 16-byte container header."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, record_count, context_length, visual = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if context_length == 0:
        raise FormatError(f"{path}: context_length must be > 0")
    return ContainerHeader(version, record_count, context_length, visual)


def read_container(path: str | Path) -> tuple[ContainerHeader, Iterator[PackedSequence]]:
    """Open a container: validated header plus a lazy record iterator.

    Records are CRC-checked as they stream; memory use is bounded by one
    record.  Corruption raises CorruptRecordError naming the record.
    """
    path = Path(path)
    header = read_header(path)
    return header, _iter_records(path, header)


def _iter_records(path: Path, header: ContainerHeader) -> Iterator[PackedSequence]:
    size = path.stat().st_size
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        pos = _HEADER.size
        for index in range(header.record_count):
            seq, crc_ok, consumed = _read_record(fh, index, size - pos)
            pos += consumed
            if not crc_ok:
                raise CorruptRecordError(index, "crc mismatch")
            _check_record(index, seq, header)
            yield seq
        if pos != size:
            raise FormatError(f"{path}: {size - pos} trailing bytes after last record")


def _check_record(index: int, seq: PackedSequence, header: ContainerHeader) -> None:
    if sum(seq.lengths) > header.context_length:
        raise CorruptRecordError(
            index, f"lengths sum {sum(seq.lengths)} exceeds context {header.context_length}"
        )


class _RecordParser:
    """Cursor over one record that tracks CRC and remaining-file bounds."""

    def __init__(self, fh: BinaryIO, index: int, remaining: int):
        self.fh = fh
        self.index = index
        self.remaining = remaining
        self.crc = 0
        self.consumed = 0

    def take(self, n: int, what: str, crc: bool = True) -> bytes:
        if n > self.remaining - self.consumed:
            raise CorruptRecordError(
                self.index, f"{what}: needs {n} bytes, {self.remaining - self.consumed} left in file"
            )
        blob = self.fh.read(n)
        if len(blob) != n:
            raise CorruptRecordError(self.index, f"{what}: short read")
        self.consumed += n
        if crc:
            self.crc = zlib.crc32(blob, self.crc)
        return blob


def _read_record(
    fh: BinaryIO, index: int, remaining: int
) -> tuple[PackedSequence, bool, int]:
    """Parse one record; returns (sequence, crc_ok, bytes consumed).

    Raises CorruptRecordError when the declared sizes cannot fit in the
    file, which makes the record boundary unrecoverable.
    """
    p = _RecordParser(fh, index, remaining)
    n_samples, n_images = struct.unpack("<II", p.take(8, "record counts"))
    lengths = _bytes_to_u32s(p.take(4 * n_samples, "sample lengths"))
    (token_count,) = struct.unpack("<I", p.take(4, "token count"))
    input_ids = _bytes_to_u32s(p.take(4 * token_count, "token ids"))
    images: list[EncodedImage] = []
    for _ in range(n_images):
        tag, n_bytes = struct.unpack("<BI", p.take(5, "image header"))
        data = p.take(n_bytes, "image payload")
        codec = _TAG_TO_CODEC.get(tag)
        if codec is None:
            raise CorruptRecordError(index, f"unknown codec tag {tag}")
        images.append(EncodedImage(codec, data))
    (stored_crc,) = struct.unpack("<I", p.take(4, "record crc", crc=False))
    seq = PackedSequence(images=images, input_ids=input_ids, lengths=lengths)
    return seq, stored_crc == p.crc, p.consumed


def verify_container(
    path: str | Path,
    placeholder_id: int | None = None,
    pad_id: int | None = None,
) -> VerifyReport:
    """Scan a whole container, counting good and corrupt records.

    A checksum failure on a structurally intact record is recorded and the
    scan continues; a record whose structure cannot be parsed aborts the
    scan since later record boundaries are unknowable.  When the special
    token ids are supplied, pipeline invariants (placeholder/image
    alignment, exact context fill, trailing padding) are checked too.
    """
    report = VerifyReport()
    path = Path(path)
    try:
        header = read_header(path)
    except FormatError as exc:
        report.error = str(exc)
        return report

    size = path.stat().st_size
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        pos = _HEADER.size
        for index in range(header.record_count):
            try:
                seq, crc_ok, consumed = _read_record(fh, index, size - pos)
            except CorruptRecordError:
                report.corrupt_records.append(index)
                report.aborted = True
                return report
            pos += consumed
            if not crc_ok:
                report.corrupt_records.append(index)
                continue
            try:
                _check_record(index, seq, header)
            except CorruptRecordError:
                report.corrupt_records.append(index)
                continue
            failure = _check_pipeline_invariants(seq, header, placeholder_id, pad_id)
            if failure:
                report.invariant_failures.append((index, failure))
                continue
            report.records_ok += 1
            report.total_tokens += len(seq.input_ids)
            report.total_images += len(seq.images)
        if pos != size:
            report.error = f"{size - pos} trailing bytes after last record"
    return report


def _check_pipeline_invariants(
    seq: PackedSequence,
    header: ContainerHeader,
    placeholder_id: int | None,
    pad_id: int | None,
) -> str | None:
    if placeholder_id is not None:
        holders = sum(1 for t in seq.input_ids if t == placeholder_id)
        if holders != len(seq.images):
            return f"{holders} placeholders vs {len(seq.images)} images"
    if pad_id is not None:
        expansion = len(seq.images) * (header.visual_tokens_per_image - 1)
        if len(seq.input_ids) + expansion != header.context_length:
            return (
                f"expanded length {len(seq.input_ids) + expansion} != "
                f"context {header.context_length}"
            )
        pad_count = header.context_length - sum(seq.lengths)
        if pad_count > len(seq.input_ids):
            return f"padding {pad_count} exceeds stored ids {len(seq.input_ids)}"
        tail = seq.input_ids[len(seq.input_ids) - pad_count :]
        if any(t != pad_id for t in tail):
            return "non-pad token in padding region"
    return None
