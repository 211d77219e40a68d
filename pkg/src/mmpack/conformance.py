"""Shared conformance fixtures for the container format.

Generates the fixture corpus under ``conformance/``: containers written
by this pipeline plus a manifest of expected field values, so any
independent reader of the format can be checked against known-good
files.  Generation is fully deterministic, including image bytes.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
import string
import struct
import sys
import zlib
from pathlib import Path

from .ingest import CaptionSample, ImagePayload, Shard
from .lengths import ByteTokenizer, PackerConfig
from .packer import PackedSequence, pack_shard
from .packstore import write_container

CORPUS_SEED = 20250810


def tiny_png(width: int = 2, height: int = 2, rgb: tuple[int, int, int] = (255, 0, 0)) -> bytes:
    """Minimal valid truecolor PNG, built by hand so bytes never drift."""

    def chunk(tag: bytes, data: bytes) -> bytes:
        blob = tag + data
        return struct.pack(">I", len(data)) + blob + struct.pack(">I", zlib.crc32(blob))

    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    row = b"\x00" + bytes(rgb) * width
    idat = zlib.compress(row * height, 9)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", idat) + chunk(b"IEND", b"")


# 2x2 baseline JPEG, fixed bytes (JFIF, quality 90).
TINY_JPEG = (
    b'\xff\xd8\xff\xe0\x00\x10JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00\xff\xdb\x00C'
    b'\x00\x03\x02\x02\x03\x02\x02\x03\x03\x03\x03\x04\x03\x03\x04\x05\x08\x05\x05\x04\x04'
    b'\x05\n\x07\x07\x06\x08\x0c\n\x0c\x0c\x0b\n\x0b\x0b\r\x0e\x12\x10\r\x0e\x11\x0e\x0b'
    b'\x0b\x10\x16\x10\x11\x13\x14\x15\x15\x15\x0c\x0f\x17\x18\x16\x14\x18\x12\x14\x15\x14'
    b'\xff\xdb\x00C\x01\x03\x04\x04\x05\x04\x05\t\x05\x05\t\x14\r\x0b\r\x14\x14\x14\x14'
    b'\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14'
    b'\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14\x14'
    b'\x14\x14\x14\x14\xff\xc0\x00\x11\x08\x00\x02\x00\x02\x03\x01"\x00\x02\x11\x01\x03'
    b'\x11\x01\xff\xc4\x00\x1f\x00\x00\x01\x05\x01\x01\x01\x01\x01\x01\x00\x00\x00\x00\x00'
    b'\x00\x00\x00\x01\x02\x03\x04\x05\x06\x07\x08\t\n\x0b\xff\xc4\x00\xb5\x10\x00\x02\x01'
    b'\x03\x03\x02\x04\x03\x05\x05\x04\x04\x00\x00\x01}\x01\x02\x03\x00\x04\x11\x05\x12!1A'
    b'\x06\x13Qa\x07"q\x142\x81\x91\xa1\x08#B\xb1\xc1\x15R\xd1\xf0$3br\x82\t\n\x16\x17\x18'
    b'\x19\x1a%&\'()*456789:CDEFGHIJSTUVWXYZcdefghijstuvwxyz\x83\x84\x85\x86\x87\x88\x89'
    b'\x8a\x92\x93\x94\x95\x96\x97\x98\x99\x9a\xa2\xa3\xa4\xa5\xa6\xa7\xa8\xa9\xaa\xb2\xb3'
    b'\xb4\xb5\xb6\xb7\xb8\xb9\xba\xc2\xc3\xc4\xc5\xc6\xc7\xc8\xc9\xca\xd2\xd3\xd4\xd5\xd6'
    b'\xd7\xd8\xd9\xda\xe1\xe2\xe3\xe4\xe5\xe6\xe7\xe8\xe9\xea\xf1\xf2\xf3\xf4\xf5\xf6\xf7'
    b'\xf8\xf9\xfa\xff\xc4\x00\x1f\x01\x00\x03\x01\x01\x01\x01\x01\x01\x01\x01\x01\x00\x00'
    b'\x00\x00\x00\x00\x01\x02\x03\x04\x05\x06\x07\x08\t\n\x0b\xff\xc4\x00\xb5\x11\x00\x02'
    b'\x01\x02\x04\x04\x03\x04\x07\x05\x04\x04\x00\x01\x02w\x00\x01\x02\x03\x11\x04\x05!1'
    b'\x06\x12AQ\x07aq\x13"2\x81\x08\x14B\x91\xa1\xb1\xc1\t#3R\xf0\x15br\xd1\n\x16$4\xe1%'
    b'\xf1\x17\x18\x19\x1a&\'()*56789:CDEFGHIJSTUVWXYZcdefghijstuvwxyz\x82\x83\x84\x85\x86'
    b'\x87\x88\x89\x8a\x92\x93\x94\x95\x96\x97\x98\x99\x9a\xa2\xa3\xa4\xa5\xa6\xa7\xa8\xa9'
    b'\xaa\xb2\xb3\xb4\xb5\xb6\xb7\xb8\xb9\xba\xc2\xc3\xc4\xc5\xc6\xc7\xc8\xc9\xca\xd2\xd3'
    b'\xd4\xd5\xd6\xd7\xd8\xd9\xda\xe2\xe3\xe4\xe5\xe6\xe7\xe8\xe9\xea\xf2\xf3\xf4\xf5\xf6'
    b'\xf7\xf8\xf9\xfa\xff\xda\x00\x0c\x03\x01\x00\x02\x11\x03\x11\x00?\x00\xfbkJ\xf0G\x87'
    b'c\xd2\xec\xd5t\r-TB\x80\x01g\x18\x00m\x1f\xec\xd1E\x15\xfc\xe2\xf7?k\xa9\xf1\xcb\xd4'
    b'\xff\xd9'
)

_PALETTE = [
    (214, 40, 40),
    (247, 127, 0),
    (252, 191, 73),
    (144, 190, 109),
    (67, 170, 139),
    (87, 117, 144),
]


def _synthetic_shard(n_samples: int, rng: random.Random) -> Shard:
    samples = []
    for i in range(n_samples):
        if rng.random() < 0.2:
            image = ImagePayload(TINY_JPEG, "jpeg", 2, 2)
        else:
            color = _PALETTE[rng.randrange(len(_PALETTE))]
            image = ImagePayload(tiny_png(2, 2, color), "png", 2, 2)
        n_chars = rng.randint(5, 200)
        caption = "".join(rng.choice(string.ascii_lowercase + " ") for _ in range(n_chars))
        samples.append(CaptionSample(f"sample{i:05d}", image, caption))
    return Shard(0, samples)


def _sha256(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def _ids_bytes(ids: list[int]) -> bytes:
    return struct.pack(f"<{len(ids)}I", *ids)


def _record_manifest(seq: PackedSequence, full: bool) -> dict:
    row: dict = {"lengths": seq.lengths, "token_count": len(seq.input_ids)}
    if full:
        row["input_ids"] = seq.input_ids
        row["images"] = [
            {"codec": img.codec, "data_b64": base64.b64encode(img.data).decode("ascii")}
            for img in seq.images
        ]
    else:
        row["input_ids_sha256"] = _sha256(_ids_bytes(seq.input_ids))
        row["images"] = [
            {"codec": img.codec, "sha256": _sha256(img.data), "bytes": len(img.data)}
            for img in seq.images
        ]
    return row


def _record_offsets(seqs: list[PackedSequence]) -> list[int]:
    """Byte offset of each record in a container laid out from these."""
    offsets = []
    pos = 16  # header size
    for seq in seqs:
        offsets.append(pos)
        images = sum(5 + len(img.data) for img in seq.images)
        pos += 8 + 4 * len(seq.lengths) + 4 + 4 * len(seq.input_ids) + images + 4
    return offsets


def build_fixtures(out_dir: str | Path) -> dict:
    """Write the fixture corpus and MANIFEST.json; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tok = ByteTokenizer()
    manifest: dict = {
        "format": "mmpk",
        "version": 1,
        "placeholder_id": tok.placeholder_id,
        "separator_id": tok.separator_id,
        "pad_id": tok.pad_id,
        "files": {},
    }

    # Header-only container.
    write_container([], out_dir / "empty.mmpk", context_length=4096, visual_tokens_per_image=144)
    manifest["files"]["empty.mmpk"] = {
        "record_count": 0,
        "context_length": 4096,
        "visual_tokens_per_image": 144,
    }

    # Small container with full expected values inline.
    rng = random.Random(CORPUS_SEED + 1)
    small_cfg = PackerConfig(context_length=256, pad_id=tok.pad_id, visual_tokens_per_image=16)
    small_shard = _synthetic_shard(12, rng)
    small_seqs, _ = pack_shard(small_shard, tok, small_cfg)
    write_container(
        small_seqs, out_dir / "small.mmpk", context_length=256, visual_tokens_per_image=16
    )
    manifest["files"]["small.mmpk"] = {
        "record_count": len(small_seqs),
        "context_length": 256,
        "visual_tokens_per_image": 16,
        "records": [_record_manifest(s, full=True) for s in small_seqs],
    }

    # Main corpus: one 4096-context container with 100+ records.
    rng = random.Random(CORPUS_SEED)
    corpus_cfg = PackerConfig(context_length=4096, pad_id=tok.pad_id, visual_tokens_per_image=144)
    corpus_shard = _synthetic_shard(2400, rng)
    corpus_seqs, _ = pack_shard(corpus_shard, tok, corpus_cfg)
    corpus_path = out_dir / "corpus.mmpk"
    write_container(corpus_seqs, corpus_path, context_length=4096, visual_tokens_per_image=144)
    manifest["files"]["corpus.mmpk"] = {
        "record_count": len(corpus_seqs),
        "context_length": 4096,
        "visual_tokens_per_image": 144,
        "sha256": _sha256(corpus_path.read_bytes()),
        "records": [_record_manifest(s, full=False) for s in corpus_seqs],
    }

    # Same corpus with one bit flipped inside a middle record's token ids.
    corrupt_index = len(corpus_seqs) // 2
    offsets = _record_offsets(corpus_seqs)
    target = offsets[corrupt_index] + 8 + 4 * len(corpus_seqs[corrupt_index].lengths) + 4 + 2
    blob = bytearray(corpus_path.read_bytes())
    blob[target] ^= 0x01
    (out_dir / "corrupted.mmpk").write_bytes(bytes(blob))
    manifest["files"]["corrupted.mmpk"] = {
        "record_count": len(corpus_seqs),
        "context_length": 4096,
        "visual_tokens_per_image": 144,
        "corrupt_record_index": corrupt_index,
        "flipped_byte_offset": target,
    }

    (out_dir / "MANIFEST.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def main(argv: list[str] | None = None) -> int:
    argv = argv if argv is not None else sys.argv[1:]
    out = argv[0] if argv else "conformance"
    manifest = build_fixtures(out)
    total = sum(f.get("record_count", 0) for f in manifest["files"].values())
    print(f"wrote {len(manifest['files'])} fixtures ({total} records) to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
