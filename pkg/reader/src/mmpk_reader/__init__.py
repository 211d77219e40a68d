"""Minimal validated reader for ``.mmpk`` packed-sequence containers."""

from .reader import (
    ContainerReader,
    CorruptRecordError,
    FormatError,
    ReaderError,
    ReaderRecord,
    iterate,
    open_container,
)

__version__ = "0.1.0"
