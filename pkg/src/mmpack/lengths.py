"""Tokenization and multimodal length accounting.

A sample's token sequence is ``[placeholder] + caption tokens +
[separator]``.  The stored sequence keeps a single placeholder id per
image, but the multimodal length counts each placeholder at its expanded
size (the per-image visual token budget), because that is what consumes
context at training time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, runtime_checkable

from .errors import ConfigError, ContractViolation
from .ingest import CaptionSample, Shard

DEFAULT_CONTEXT_LENGTH = 4096
PRETRAIN_VISUAL_TOKENS = 144
SFT_VISUAL_TOKENS = 729

PLACEHOLDER_TOKEN = "<image>"
SEPARATOR_TOKEN = "<|im_end|>"
PAD_TOKEN = "<pad>"


@runtime_checkable
class TokenizerPort(Protocol):
    """What the pipeline needs from a tokenizer."""

    placeholder_id: int
    separator_id: int
    pad_id: int
    vocab_size: int

    def encode(self, text: str) -> list[int]: ...


class ByteTokenizer:
    """Deterministic byte-level tokenizer: one token per UTF-8 byte.

    Special tokens sit just above the byte range, so all length math is
    testable without external vocabulary files.
    """

    placeholder_id = 256
    separator_id = 257
    pad_id = 258
    vocab_size = 259

    special_tokens = {
        PLACEHOLDER_TOKEN: placeholder_id,
        SEPARATOR_TOKEN: separator_id,
        PAD_TOKEN: pad_id,
    }

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: Iterable[int]) -> str:
        inverse = {v: k for k, v in self.special_tokens.items()}
        out: list[str] = []
        buf = bytearray()
        for tid in ids:
            if tid < 256:
                buf.append(tid)
            else:
                if buf:
                    out.append(buf.decode("utf-8", errors="replace"))
                    buf.clear()
                out.append(inverse.get(tid, f"<unk:{tid}>"))
        if buf:
            out.append(buf.decode("utf-8", errors="replace"))
        return "".join(out)


def load_tokenizer(spec: str) -> TokenizerPort:
    """Resolve a tokenizer adapter spec.

    ``"byte"`` gives the built-in byte tokenizer.  A path to a JSON file
    ``{"kind": "byte"}`` does the same; other kinds are adapter hooks a
    caller must register by implementing TokenizerPort.
    """
    if spec == "byte":
        return ByteTokenizer()
    path = Path(spec)
    if path.suffix == ".json" and path.exists():
        try:
            cfg = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ConfigError(f"{path}: bad tokenizer config: {exc}") from exc
        kind = cfg.get("kind")
        if kind == "byte":
            return ByteTokenizer()
        raise ConfigError(f"{path}: unsupported tokenizer kind {kind!r}")
    raise ConfigError(f"unknown tokenizer spec {spec!r}")


@dataclass(frozen=True)
class PackerConfig:
    """Context budget for packing; defaults match the pre-training setup."""

    context_length: int = DEFAULT_CONTEXT_LENGTH
    pad_id: int = ByteTokenizer.pad_id
    visual_tokens_per_image: int = PRETRAIN_VISUAL_TOKENS

    def __post_init__(self):
        if self.context_length < self.visual_tokens_per_image + 2:
            raise ContractViolation(
                "context_length must be >= visual_tokens_per_image + 2, got "
                f"{self.context_length} vs {self.visual_tokens_per_image}"
            )
        if self.pad_id < 0:
            raise ContractViolation("pad_id must be a valid token id")


@dataclass
class MeasuredSample:
    """A sample annotated with token ids and its multimodal length."""

    sample: CaptionSample
    text_tokens: list[int]  # placeholder + caption tokens + separator
    visual_token_count: int
    image_count: int
    len: int
    truncated: bool = False


def measure(sample: CaptionSample, tok: TokenizerPort, cfg: PackerConfig) -> MeasuredSample:
    """Token ids and multimodal length for one caption sample.

    length = caption tokens + separator + visual budget of the image.
    Captions that would push the length past the context window are
    truncated from the right (separator kept, image never dropped) and
    flagged.
    """
    visual = cfg.visual_tokens_per_image
    caption_ids = tok.encode(sample.caption)
    # One image: placeholder + caption + separator expands to
    # len(caption) + 1 + visual slots.
    max_caption = cfg.context_length - 1 - visual
    truncated = len(caption_ids) > max_caption
    if truncated:
        caption_ids = caption_ids[:max_caption]
    text_tokens = [tok.placeholder_id, *caption_ids, tok.separator_id]
    image_count = 1
    length = (len(text_tokens) - image_count) + image_count * visual
    return MeasuredSample(
        sample=sample,
        text_tokens=text_tokens,
        visual_token_count=visual,
        image_count=image_count,
        len=length,
        truncated=truncated,
    )


def measure_shard(shard: Shard, tok: TokenizerPort, cfg: PackerConfig) -> list[MeasuredSample]:
    """Measure every sample in a shard, preserving order."""
    return [measure(sample, tok, cfg) for sample in shard.samples]
