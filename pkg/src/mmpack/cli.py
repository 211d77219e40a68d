"""Command-line pipeline driver.

Subcommands: filter, reshard, pack, stats, verify, budget.  Runs are
config-driven (flat key=value file, overridden by flags) and rerunnable:
identical config plus inputs produce byte-identical outputs and reports,
independent of worker count.

Exit codes: 0 success, 1 usage/config, 2 data error, 3 I/O.
"""

from __future__ import annotations

import argparse
import glob
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path

from . import curation, ingest, packer, packstore, pooling
from .errors import ConfigError, MmpackError
from .lengths import PackerConfig, load_tokenizer

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_IO = 3

SHARD_CAPACITY = ingest.SHARD_CAPACITY


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise ConfigError(message)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` run config; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _merge_config(args: argparse.Namespace, keys: dict[str, type]) -> None:
    """Fill unset flags from the config file, converting types."""
    if not getattr(args, "config", None):
        return
    values = read_config_file(args.config)
    unknown = set(values) - set(keys)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, caster in keys.items():
        if getattr(args, key, None) is None and key in values:
            raw = values[key]
            try:
                setattr(args, key, caster(raw) if caster is not bool else raw.lower() == "true")
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc


def _shard_paths(pattern: str) -> list[Path]:
    paths = sorted(Path(p) for p in glob.glob(pattern))
    if not paths:
        raise ConfigError(f"no shards matched {pattern!r}")
    return paths


def _check_unique_outputs(jobs: list[tuple]) -> None:
    # Output names are a pure function of shard_id; two inputs carrying the
    # same id would race under --workers, so refuse up front.
    seen: dict[str, str] = {}
    for job in jobs:
        in_path, out_path = job[0], job[1]
        if out_path in seen:
            raise ConfigError(
                f"{in_path} and {seen[out_path]} both map to {out_path}; "
                "input shards must carry distinct shard ids"
            )
        seen[out_path] = in_path


def _prepare_output(directory: str) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-probe"
    try:
        probe.write_bytes(b"")
    finally:
        if probe.exists():
            probe.unlink()
    return out


def _write_report(path: str | None, rows: list[dict]) -> None:
    if path is None:
        return
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_report(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _run_jobs(fn, jobs: list, workers: int) -> list:
    """Map fn over jobs, optionally on a process pool; order preserved."""
    if workers <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


@lru_cache(maxsize=2)
def _cached_score_table(path: str):
    return curation.load_score_table(path)


# ---------------------------------------------------------------- filter

def _filter_one(job: tuple) -> dict:
    shard_path, out_name, metric, threshold, scores_path = job
    out_path = Path(out_name)
    tmp = out_path.with_name(out_path.name + ".tmp")
    try:
        shard, skipped = ingest.read_shard(shard_path)
        stream = iter(shard.samples)
        if scores_path is not None:
            stream = curation.attach_scores(stream, _cached_score_table(scores_path))
        stats = curation.FilterStats()
        kept = list(curation.filter_by_threshold(stream, metric, threshold, stats))
        ingest.write_shard(ingest.Shard(shard.shard_id, kept), tmp)
        tmp.replace(out_path)
        return {
            "kind": "shard",
            "shard_id": shard.shard_id,
            "input": str(shard_path),
            "output": str(out_path),
            "kept": stats.kept,
            "dropped": stats.dropped,
            "missing_score": stats.missing,
            "read_skipped": len(skipped),
        }
    except Exception as exc:
        if tmp.exists():
            tmp.unlink()
        kind = "io" if isinstance(exc, OSError) else "data"
        return {"kind": "error", "input": str(shard_path), "error": str(exc), "error_kind": kind}


def cmd_filter(args) -> int:
    shards = _shard_paths(args.input)
    out_dir = _prepare_output(args.output)
    if args.scores is not None and not Path(args.scores).exists():
        raise FileNotFoundError(f"score table not found: {args.scores}")
    jobs = [
        (
            str(path),
            str(out_dir / f"{args.prefix}-{ingest.shard_id_from_path(path):06d}.tar"),
            args.metric,
            args.threshold,
            args.scores,
        )
        for path in shards
    ]
    _check_unique_outputs(jobs)
    rows = _run_jobs(_filter_one, jobs, args.workers)
    total = {
        "kind": "total",
        "shards": len(rows),
        "failed": sum(1 for r in rows if r["kind"] == "error"),
        "kept": sum(r.get("kept", 0) for r in rows),
        "dropped": sum(r.get("dropped", 0) for r in rows),
        "missing_score": sum(r.get("missing_score", 0) for r in rows),
        "read_skipped": sum(r.get("read_skipped", 0) for r in rows),
    }
    rows.append(total)
    _write_report(args.report, rows)
    print(
        f"filter: {total['shards']} shards, kept {total['kept']}, "
        f"dropped {total['dropped']}, missing score {total['missing_score']}"
    )
    for row in rows:
        if row["kind"] == "error":
            print(f"  failed {row['input']}: {row['error']}", file=sys.stderr)
    return EXIT_DATA if total["failed"] else EXIT_OK


# ---------------------------------------------------------------- reshard

def cmd_reshard(args) -> int:
    shard_paths = _shard_paths(args.input)
    out_dir = _prepare_output(args.output)
    keep = curation.load_uid_set(args.uid_set)

    def shards():
        for path in shard_paths:
            yield ingest.read_shard(path).shard

    stats = curation.CoverageStats()
    written: list[dict] = []
    buffer: list = []

    def flush():
        shard = ingest.Shard(len(written), list(buffer))
        out_path = out_dir / f"{args.prefix}-{shard.shard_id:06d}.tar"
        ingest.write_shard(shard, out_path)
        written.append(
            {"kind": "shard", "shard_id": shard.shard_id, "output": str(out_path), "samples": len(buffer)}
        )
        buffer.clear()

    for sample in curation.select_by_uid_set(shards(), keep, stats):
        buffer.append(sample)
        if len(buffer) == SHARD_CAPACITY:
            flush()
    if buffer:
        flush()

    rows = written + [
        {
            "kind": "total",
            "keep_size": stats.keep_size,
            "matched": stats.matched,
            "unmatched": len(stats.unmatched),
            "shards_written": len(written),
            "samples_written": sum(r["samples"] for r in written),
        }
    ]
    _write_report(args.report, rows)
    print(
        f"reshard: matched {stats.matched} of keep-set {stats.keep_size} "
        f"({len(stats.unmatched)} unmatched) into {len(written)} shards"
    )
    return EXIT_OK


# ---------------------------------------------------------------- pack

def _pack_one(job: tuple) -> dict:
    shard_path, out_name, tokenizer_spec, context_length, visual_tokens = job
    out_path = Path(out_name)
    tmp = out_path.with_name(out_path.name + ".tmp")
    try:
        tok = load_tokenizer(tokenizer_spec)
        cfg = PackerConfig(
            context_length=context_length,
            pad_id=tok.pad_id,
            visual_tokens_per_image=visual_tokens,
        )
        shard, skipped = ingest.read_shard(shard_path)
        seqs, report = packer.pack_shard(shard, tok, cfg)
        packstore.write_container(
            seqs, tmp, context_length=context_length, visual_tokens_per_image=visual_tokens
        )
        tmp.replace(out_path)
        return {
            "kind": "shard",
            "shard_id": shard.shard_id,
            "input": str(shard_path),
            "output": str(out_path),
            "samples": sum(len(s.lengths) for s in seqs),
            "sequences": report.bin_count,
            "content_tokens": report.total_content_tokens,
            "pad_tokens": report.total_pad_tokens,
            "padding_ratio": report.padding_ratio,
            "lower_bound": report.lower_bound,
            "truncated": report.truncated_samples,
            "read_skipped": len(skipped),
        }
    except Exception as exc:
        if tmp.exists():
            tmp.unlink()
        kind = "io" if isinstance(exc, OSError) else "data"
        return {"kind": "error", "input": str(shard_path), "error": str(exc), "error_kind": kind}


def cmd_pack(args) -> int:
    shards = _shard_paths(args.input)
    out_dir = _prepare_output(args.output)
    load_tokenizer(args.tokenizer)  # fail fast on a bad spec
    jobs = [
        (
            str(path),
            str(out_dir / f"{args.prefix}-{ingest.shard_id_from_path(path):06d}.mmpk"),
            args.tokenizer,
            args.context_length,
            args.visual_tokens,
        )
        for path in shards
    ]
    _check_unique_outputs(jobs)
    rows = _run_jobs(_pack_one, jobs, args.workers)
    content = sum(r.get("content_tokens", 0) for r in rows)
    pad = sum(r.get("pad_tokens", 0) for r in rows)
    bins = sum(r.get("sequences", 0) for r in rows)
    samples = sum(r.get("samples", 0) for r in rows)
    failed = sum(1 for r in rows if r["kind"] == "error")
    total = {
        "kind": "total",
        "shards": len(jobs),
        "failed": failed,
        "samples": samples,
        "sequences": bins,
        "content_tokens": content,
        "pad_tokens": pad,
        "padding_ratio": pad / (pad + content) if pad + content else 0.0,
        "samples_per_sequence": samples / bins if bins else 0.0,
        "lower_bound": -(-content // args.context_length) if content else 0,
        "truncated": sum(r.get("truncated", 0) for r in rows),
        "read_skipped": sum(r.get("read_skipped", 0) for r in rows),
    }
    rows.append(total)
    _write_report(args.report, rows)
    print(
        f"pack: {bins} sequences from {samples} samples over {len(jobs)} shards; "
        f"padding ratio {total['padding_ratio']:.4%}, "
        f"{total['samples_per_sequence']:.2f} samples/sequence"
    )
    for row in rows:
        if row["kind"] == "error":
            print(f"  failed {row['input']}: {row['error']}", file=sys.stderr)
    return EXIT_DATA if failed else EXIT_OK


# ---------------------------------------------------------------- stats

def cmd_stats(args) -> int:
    if not args.inputs and not args.mixture:
        raise ConfigError("stats needs container/report inputs or --mixture")
    paths: list[Path] = []
    for pattern in args.inputs:
        matched = sorted(glob.glob(pattern))
        if not matched:
            raise FileNotFoundError(f"no inputs matched {pattern!r}")
        paths.extend(Path(p) for p in matched)

    content = pad = sequences = samples = 0
    for path in paths:
        if path.suffix == ".mmpk":
            header, records = packstore.read_container(path)
            for seq in records:
                used = sum(seq.lengths)
                content += used
                pad += header.context_length - used
                samples += len(seq.lengths)
                sequences += 1
        else:
            for row in read_report(path):
                if row.get("kind") == "total":
                    content += row.get("content_tokens", 0)
                    pad += row.get("pad_tokens", 0)
                    samples += row.get("samples", 0)
                    sequences += row.get("sequences", 0)

    if sequences or content or pad:
        ratio = pad / (pad + content) if pad + content else 0.0
        print(f"sequences:           {sequences}")
        print(f"samples:             {samples}")
        print(f"content tokens:      {content}")
        print(f"pad tokens:          {pad}")
        print(f"padding ratio:       {ratio:.4%}")
        print(f"samples/sequence:    {samples / sequences if sequences else 0.0:.3f}")

    if args.mixture:
        corpora = [
            (row["source"], row["count"]) for row in read_report(args.mixture)
        ]
        print(curation.mixture_report(corpora).render())
    return EXIT_OK


# ---------------------------------------------------------------- verify

def cmd_verify(args) -> int:
    tok = load_tokenizer(args.tokenizer)
    paths: list[Path] = []
    for pattern in args.inputs:
        matched = sorted(glob.glob(pattern))
        if not matched:
            raise FileNotFoundError(f"no containers matched {pattern!r}")
        paths.extend(Path(p) for p in matched)

    for path in paths:
        report = packstore.verify_container(
            path, placeholder_id=tok.placeholder_id, pad_id=tok.pad_id
        )
        if not report.clean:
            if report.error:
                print(f"{path}: {report.error}")
            for index in report.corrupt_records:
                print(f"{path}: corrupt record {index}")
            for index, reason in report.invariant_failures:
                print(f"{path}: record {index} violates invariants: {reason}")
            return EXIT_DATA
        print(
            f"{path}: ok ({report.records_ok} records, "
            f"{report.total_tokens} tokens, {report.total_images} images)"
        )
    return EXIT_OK


# ---------------------------------------------------------------- budget

def cmd_budget(args) -> int:
    spec = pooling.PoolSpec(args.pool_side)
    count = pooling.token_budget(args.images, spec, args.mode, args.grid_side)
    print(count)
    return EXIT_OK


# ---------------------------------------------------------------- wiring

_CONFIG_KEYS = {
    "input": str,
    "output": str,
    "tokenizer": str,
    "context_length": int,
    "visual_tokens": int,
    "metric": str,
    "threshold": float,
    "uid_set": str,
    "scores": str,
    "workers": int,
    "report": str,
    "prefix": str,
    "mixture": str,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="mmpack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, prefix_default):
        p.add_argument("--config", help="flat key=value run config file")
        p.add_argument("--input", help="input shard glob")
        p.add_argument("--output", help="output directory")
        p.add_argument("--workers", type=int, help="worker processes (default 1)")
        p.add_argument("--report", help="write a machine-readable NDJSON report here")
        p.add_argument("--prefix", help=f"output file prefix (default {prefix_default})")
        p.set_defaults(prefix_default=prefix_default)

    p = sub.add_parser("filter", help="keep samples at or above a score threshold")
    common(p, "filtered")
    p.add_argument("--metric", help="score metric name (default su)")
    p.add_argument("--threshold", type=float, help="inclusive keep threshold (default 85)")
    p.add_argument("--scores", help="NDJSON score table to attach before filtering")
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("reshard", help="select samples by uid set and repack shards")
    common(p, "shard")
    p.add_argument("--uid-set", dest="uid_set", help="uid keep-set file (text or MMU1)")
    p.set_defaults(fn=cmd_reshard)

    p = sub.add_parser("pack", help="pack shards into fixed-context containers")
    common(p, "pack")
    p.add_argument("--tokenizer", help="tokenizer spec (default byte)")
    p.add_argument("--context-length", dest="context_length", type=int)
    p.add_argument("--visual-tokens", dest="visual_tokens", type=int)
    p.set_defaults(fn=cmd_pack)

    p = sub.add_parser("stats", help="summarize containers and run reports")
    p.add_argument("inputs", nargs="*", help=".mmpk containers or NDJSON reports")
    p.add_argument("--mixture", help="NDJSON mixture file: {source, count} rows")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("verify", help="integrity-check containers")
    p.add_argument("inputs", nargs="+", help=".mmpk container files or globs")
    p.add_argument("--tokenizer", default="byte", help="tokenizer spec (default byte)")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("budget", help="visual token budget for an image count")
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--mode", choices=["pretrain", "sft"], default="pretrain")
    p.add_argument("--pool-side", dest="pool_side", type=int, default=pooling.PRETRAIN_POOL_SIDE)
    p.add_argument("--grid-side", dest="grid_side", type=int, default=pooling.ENCODER_GRID_SIDE)
    p.set_defaults(fn=cmd_budget)

    return parser


_DEFAULTS = {
    "tokenizer": "byte",
    "context_length": 4096,
    "visual_tokens": 144,
    "metric": "su",
    "threshold": 85.0,
    "workers": 1,
}


def _finalize(args: argparse.Namespace) -> None:
    if hasattr(args, "config"):
        _merge_config(args, _CONFIG_KEYS)
    for key, value in _DEFAULTS.items():
        if getattr(args, key, "absent") is None:
            setattr(args, key, value)
    if getattr(args, "prefix", "absent") is None:
        args.prefix = args.prefix_default
    if getattr(args, "workers", 1) < 1:
        raise ConfigError("workers must be >= 1")
    for required in ("input", "output"):
        if getattr(args, required, "absent") is None:
            raise ConfigError(f"missing required option --{required}")
    if getattr(args, "fn", None) is cmd_reshard and args.uid_set is None:
        raise ConfigError("reshard requires --uid-set")


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _finalize(args)
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MmpackError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
