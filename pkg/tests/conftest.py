"""Shared fixtures and factories for the test suite."""

from __future__ import annotations

import random
import string

import pytest

from mmpack.conformance import TINY_JPEG, tiny_png
from mmpack.ingest import CaptionSample, ImagePayload, Shard
from mmpack.lengths import ByteTokenizer, MeasuredSample, PackerConfig

PNG_RED = tiny_png(2, 2, (255, 0, 0))
PNG_BLUE = tiny_png(3, 2, (0, 0, 255))


def make_sample(
    uid: str,
    caption: str = "a photo",
    scores: dict | None = None,
    image_bytes: bytes | None = None,
    codec: str = "png",
    dims: tuple[int, int] | None = None,
) -> CaptionSample:
    data = image_bytes if image_bytes is not None else PNG_RED
    if dims is None:
        dims = (2, 2)
    return CaptionSample(uid, ImagePayload(data, codec, *dims), caption, dict(scores or {}))


def make_shard(n: int, shard_id: int = 0, caption_len: int = 12, seed: int = 0) -> Shard:
    rng = random.Random(seed)
    samples = []
    for i in range(n):
        caption = "".join(rng.choice(string.ascii_lowercase) for _ in range(caption_len))
        samples.append(make_sample(f"u{i:06d}", caption))
    return Shard(shard_id, samples)


def measured_stub(uid: str, length: int, tok: ByteTokenizer | None = None) -> MeasuredSample:
    """A measured sample of an exact multimodal length, image-free."""
    tok = tok or ByteTokenizer()
    assert length >= 1
    return MeasuredSample(
        sample=make_sample(uid),
        text_tokens=[0] * (length - 1) + [tok.separator_id],
        visual_token_count=0,
        image_count=0,
        len=length,
    )


@pytest.fixture
def tok() -> ByteTokenizer:
    return ByteTokenizer()


@pytest.fixture
def cfg(tok) -> PackerConfig:
    return PackerConfig(context_length=4096, pad_id=tok.pad_id, visual_tokens_per_image=144)


__all__ = [
    "PNG_RED",
    "PNG_BLUE",
    "TINY_JPEG",
    "make_sample",
    "make_shard",
    "measured_stub",
]
