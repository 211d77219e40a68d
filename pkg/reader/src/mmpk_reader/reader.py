"""Validated sequential reader for ``.mmpk`` packed-sequence containers.

Implements the container layout from FORMAT.md: a 16-byte header
followed by CRC-guarded records holding per-sample lengths, raw token
ids and encoded image payloads.  Pure stdlib; image payloads are handed
to the caller as opaque bytes, never decoded.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from typing import Iterator

MAGIC = b"MMPK"
SUPPORTED_VERSION = 1
HEADER_SIZE = 16

CODEC_NAMES = {1: "jpeg", 2: "png", 3: "webp"}


class ReaderError(Exception):
    """Base error for this package."""


class FormatError(ReaderError):
    """The file is not a readable container of the supported version."""


class CorruptRecordError(FormatError):
    """A record failed its checksum or cannot be parsed."""

    def __init__(self, record_index: int, message: str):
        super().__init__(f"record {record_index}: {message}")
        self.record_index = record_index


@dataclass
class ReaderRecord:
    """One packed sequence: images as (codec, bytes), token ids, lengths."""

    images: list[tuple[str, bytes]]
    input_ids: list[int]
    lengths: list[int]


class ContainerReader:
    """Single-consumer handle over one container file.

    Exposes the header fields and iterates records lazily, holding at
    most one record in memory.  Multiple handles on the same file are
    independent.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)
        self._file_size = os.path.getsize(self.path)
        self._fh = open(self.path, "rb")
        try:
            raw = self._fh.read(HEADER_SIZE)
            if len(raw) != HEADER_SIZE:
                raise FormatError(f"{self.path}: truncated header ({len(raw)} bytes)")
            magic, version, records, context, visual = struct.unpack("<4sHIIH", raw)
            if magic != MAGIC:
                raise FormatError(f"{self.path}: bad magic {magic!r}")
            if version != SUPPORTED_VERSION:
                raise FormatError(f"{self.path}: unsupported version {version}")
            if context == 0:
                raise FormatError(f"{self.path}: context_length must be > 0")
        except Exception:
            self._fh.close()
            raise
        self.version = version
        self.record_count = records
        self.context_length = context
        self.visual_tokens_per_image = visual
        self._pos = HEADER_SIZE

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "ContainerReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __iter__(self) -> Iterator[ReaderRecord]:
        return iterate(self)

    # -- internal cursor helpers -------------------------------------

    def _read_exact(self, n: int, index: int, what: str) -> bytes:
        if n > self._file_size - self._pos:
            raise CorruptRecordError(
                index, f"{what}: needs {n} bytes, {self._file_size - self._pos} left"
            )
        blob = self._fh.read(n)
        if len(blob) != n:
            raise CorruptRecordError(index, f"{what}: short read")
        self._pos += n
        return blob

    def _read_one(self, index: int) -> ReaderRecord:
        crc = 0

        def take(n: int, what: str) -> bytes:
            nonlocal crc
            blob = self._read_exact(n, index, what)
            crc = zlib.crc32(blob, crc)
            return blob

        n_samples, n_images = struct.unpack("<II", take(8, "record counts"))
        lengths = list(struct.unpack(f"<{n_samples}I", take(4 * n_samples, "lengths")))
        (token_count,) = struct.unpack("<I", take(4, "token count"))
        input_ids = list(struct.unpack(f"<{token_count}I", take(4 * token_count, "token ids")))
        images: list[tuple[str, bytes]] = []
        for _ in range(n_images):
            tag, n_bytes = struct.unpack("<BI", take(5, "image header"))
            payload = take(n_bytes, "image payload")
            name = CODEC_NAMES.get(tag)
            if name is None:
                raise CorruptRecordError(index, f"unknown codec tag {tag}")
            images.append((name, payload))
        (stored,) = struct.unpack("<I", self._read_exact(4, index, "record crc"))
        if stored != crc:
            raise CorruptRecordError(index, "crc mismatch")
        if sum(lengths) > self.context_length:
            raise CorruptRecordError(
                index, f"lengths sum {sum(lengths)} exceeds context {self.context_length}"
            )
        return ReaderRecord(images=images, input_ids=input_ids, lengths=lengths)


def open_container(path: str | os.PathLike) -> ContainerReader:
    """Open a container and validate its header."""
    return ContainerReader(path)


def iterate(handle: ContainerReader) -> Iterator[ReaderRecord]:
    """Yield records in stored order, CRC-validated, one at a time."""
    for index in range(handle.record_count):
        yield handle._read_one(index)
    if handle._pos != handle._file_size:
        raise FormatError(
            f"{handle.path}: {handle._file_size - handle._pos} trailing bytes after last record"
        )
