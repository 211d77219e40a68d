"""First-fit-decreasing packing of measured samples into context-length bins.

Items are sorted by multimodal length, largest first (ties broken by
original position), and each is placed into the first bin, in creation
order, that still has room; otherwise a new bin opens.  Assembly then
concatenates token ids and image payloads per bin and pads the remainder
of the context window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ContractViolation
from .ingest import Shard
from .lengths import MeasuredSample, PackerConfig, TokenizerPort, measure_shard


@dataclass
class Bin:
    """An open bin: member samples plus their combined multimodal length."""

    members: list[MeasuredSample] = field(default_factory=list)
    used: int = 0

    def add(self, item: MeasuredSample) -> None:
        self.members.append(item)
        self.used += item.len


@dataclass(frozen=True)
class EncodedImage:
    """Encoded image payload as stored in packed records."""

    codec: str
    data: bytes


@dataclass
class PackedSequence:
    """One packed context window: ordered images, token ids, member lengths.

    ``input_ids`` holds raw token ids (one placeholder per image); padding
    is sized so the sequence fills the context length exactly once every
    placeholder is expanded to its visual token budget.
    """

    images: list[EncodedImage]
    input_ids: list[int]
    lengths: list[int]


@dataclass
class PackReport:
    """Packing efficiency accounting, in expanded-token space."""

    bin_count: int = 0
    total_content_tokens: int = 0
    total_pad_tokens: int = 0
    padding_ratio: float = 0.0
    samples_per_bin_mean: float = 0.0
    lower_bound: int = 0
    truncated_samples: int = 0

    @classmethod
    def from_bins(cls, bins: list[Bin], cfg: PackerConfig) -> PackReport:
        content = sum(b.used for b in bins)
        pad = sum(cfg.context_length - b.used for b in bins)
        samples = sum(len(b.members) for b in bins)
        truncated = sum(1 for b in bins for m in b.members if m.truncated)
        return cls(
            bin_count=len(bins),
            total_content_tokens=content,
            total_pad_tokens=pad,
            padding_ratio=pad / (pad + content) if pad + content else 0.0,
            samples_per_bin_mean=samples / len(bins) if bins else 0.0,
            lower_bound=math.ceil(content / cfg.context_length),
            truncated_samples=truncated,
        )


def first_fit_decreasing(lengths: list[int], capacity: int) -> list[list[int]]:
    """Core placement: bins of input indices, in bin-creation order."""
    order = sorted(range(len(lengths)), key=lambda i: (-lengths[i], i))
    bins: list[list[int]] = []
    used: list[int] = []
    for i in order:
        length = lengths[i]
        for b in range(len(bins)):
            if used[b] + length <= capacity:
                bins[b].append(i)
                used[b] += length
                break
        else:
            bins.append([i])
            used.append(length)
    return bins


def ffd_pack(items: list[MeasuredSample], cfg: PackerConfig) -> list[Bin]:
    """Pack measured samples into bins of at most ``cfg.context_length``."""
    capacity = cfg.context_length
    for item in items:
        if item.len > capacity:
            raise ContractViolation(
                f"sample {item.sample.uid!r} has length {item.len} > context {capacity}"
            )
    bins: list[Bin] = []
    for indices in first_fit_decreasing([it.len for it in items], capacity):
        b = Bin()
        for i in indices:
            b.add(items[i])
        bins.append(b)
    return bins


def assemble(bins: list[Bin], cfg: PackerConfig) -> list[PackedSequence]:
    """Concatenate each bin into a padded packed sequence.

    Padding is counted in expanded space: raw ids plus per-image expansion
    always total exactly the context length.
    """
    sequences: list[PackedSequence] = []
    for b in bins:
        if not b.members:
            raise ContractViolation("bins must be non-empty")
        if b.used > cfg.context_length:
            raise ContractViolation(f"bin overflows context: {b.used} > {cfg.context_length}")
        input_ids: list[int] = []
        images: list[EncodedImage] = []
        lengths: list[int] = []
        for m in b.members:
            input_ids.extend(m.text_tokens)
            if m.image_count == 1:
                images.append(EncodedImage(m.sample.image.codec, m.sample.image.data))
            elif m.image_count != 0:
                raise ContractViolation("caption samples carry at most one image")
            lengths.append(m.len)
        input_ids.extend([cfg.pad_id] * (cfg.context_length - b.used))
        sequences.append(PackedSequence(images=images, input_ids=input_ids, lengths=lengths))
    return sequences


def pack_shard(
    shard: Shard, tok: TokenizerPort, cfg: PackerConfig
) -> tuple[list[PackedSequence], PackReport]:
    """Measure, pack and assemble one shard; deterministic for fixed inputs."""
    measured = measure_shard(shard, tok, cfg)
    bins = ffd_pack(measured, cfg)
    return assemble(bins, cfg), PackReport.from_bins(bins, cfg)
