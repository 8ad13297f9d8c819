"""s2attn command line.

Usage:
    s2attn pattern render --config cfg.json --head 1 [--format text|pgm] [--out PATH]
    s2attn pattern verify --config cfg.json [--out report.json]
    s2attn report flops --config cfg.json [--head-dim 64] [--out flops.csv]
    s2attn report kvcache --config cfg.json [--out kv.csv]
    s2attn selftest [--seed 0] [--instances 100] [--out table.csv]

Exit status is 0 only when every requested check passes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import analysis
from .config import ConfigError, LayerSchedule, PatternConfig
from .pattern import build_head_mask, build_layer_masks
from .render import render_pgm, render_text
from .selftest import rows_to_csv, run_selftest
from .sparse_format import nnz_per_head, to_csr
from .verify import verify_config

CSV_HEADER = ["layer", "head", "metric", "value"]


@dataclass(frozen=True)
class CliConfigFile:
    pattern: PatternConfig
    schedule: Optional[LayerSchedule] = None
    out: Optional[str] = None
    format: Optional[str] = None


def _line_of(text: str, field: Optional[str]) -> Optional[int]:
    if not field:
        return None
    key = re.sub(r"\[\d+\]", "", field.rsplit(".", 1)[-1])
    match = re.search(rf'"{re.escape(key)}"\s*:', text)
    return text.count("\n", 0, match.start()) + 1 if match else None


def load_config_file(path: str) -> CliConfigFile:
    """Read a config document: either ``{"pattern": ..., "schedule": ..., "report": ...}`` or a bare pattern."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}: invalid JSON: {err.msg}") from None
    try:
        if not isinstance(doc, dict):
            raise ConfigError("top level must be an object")
        if "pattern" not in doc:
            return CliConfigFile(PatternConfig.from_dict(doc))
        extra = sorted(set(doc) - {"pattern", "schedule", "report"})
        if extra:
            raise ConfigError(f"unknown field(s) {extra}")
        pattern = PatternConfig.from_dict(doc["pattern"])
        schedule = None
        if doc.get("schedule") is not None:
            schedule = LayerSchedule.from_dict(doc["schedule"], pattern)
        report = doc.get("report") or {}
        return CliConfigFile(pattern, schedule, report.get("out"), report.get("format"))
    except ConfigError as err:
        line = _line_of(text, err.field)
        where = f"{path}:{line}" if line else path
        raise ConfigError(f"{where}: {err}") from None


def _emit(data, out: Optional[str]) -> None:
    if out is None or out == "-":
        if isinstance(data, bytes):
            sys.stdout.buffer.write(data)
            sys.stdout.flush()
        else:
            sys.stdout.write(data)
        return
    path = Path(out)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data)


def _csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_render(args, cfg: CliConfigFile) -> int:
    fmt = args.format or cfg.format or "text"
    if fmt not in ("text", "pgm"):
        raise ConfigError(f"render supports text or pgm, not {fmt!r}", "format")
    mask = build_head_mask(cfg.pattern, args.head)
    _emit(render_text(mask) if fmt == "text" else render_pgm(mask), args.out or cfg.out)
    return 0


def cmd_verify(args, cfg: CliConfigFile) -> int:
    report = verify_config(cfg.pattern)
    out = args.out or cfg.out
    if out:
        _emit(report.to_json() + "\n", out)
    for name, ok in (("union_complete", report.union_complete),
                     ("heterogeneous", report.heterogeneous),
                     ("kv_cache_efficient", report.kv_cache_efficient)):
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    for note in report.notes:
        print(f"note: {note}")
    shown = report.violations[:20]
    for v in shown:
        print(f"violation: rule={v.rule} head={v.head} query_block={v.query_block} key_block={v.key_block}")
    if len(report.violations) > len(shown):
        print(f"... {len(report.violations) - len(shown)} more violation(s)")
    return 0 if report.ok else 1


def _schedule(cfg: CliConfigFile) -> LayerSchedule:
    return cfg.schedule or LayerSchedule(1, cfg.pattern)


def cmd_report_flops(args, cfg: CliConfigFile) -> int:
    schedule = _schedule(cfg)
    pattern = schedule.sparse_pattern
    S, d = pattern.block_size, args.head_dim
    rows = []
    dense_total = sparse_total = 0.0
    dense_head_nnz = pattern.num_blocks * (pattern.num_blocks + 1) // 2
    for layer, masks in enumerate(build_layer_masks(schedule)):
        for mask in masks:
            nnz = nnz_per_head(to_csr(mask))
            sparse = analysis.block_pair_flops(nnz, d, S)
            dense = analysis.block_pair_flops(dense_head_nnz, d, S)
            rows += [(layer, mask.head_index, "nnz_blocks", nnz),
                     (layer, mask.head_index, "sparse_flops", f"{sparse:.0f}"),
                     (layer, mask.head_index, "dense_flops", f"{dense:.0f}")]
            sparse_total += sparse
            dense_total += dense
    exact = dense_total / sparse_total
    analytic = analysis.exact_flops(pattern, d).analytic_reduction
    rows.append(("all", "all", "reduction_factor", f"{exact:.6f}"))
    if analytic is not None:
        rows.append(("all", "all", "analytic_reduction", f"{analytic:.6f}"))
    _write_report(args, cfg, rows, {"exact_reduction": exact, "analytic_reduction": analytic})
    if analytic is not None:
        L = min(pattern.local_blocks * S, pattern.seq_len)
        v = pattern.stride_segments[0].stride
        print(f"analytic FLOPs reduction (N={pattern.seq_len}, L={L}, v={v}): {analytic:.2f}")
    print(f"exact block FLOPs reduction: {exact:.2f}")
    return 0


def cmd_report_kvcache(args, cfg: CliConfigFile) -> int:
    schedule = _schedule(cfg)
    pattern = schedule.sparse_pattern
    sparse = analysis.simulate_decode_cache(pattern)
    dense = analysis.dense_cache_schedule(pattern)
    rows = []
    for layer in range(schedule.num_layers):
        trace = dense if layer in schedule.dense_layer_ids else sparse
        for unit in range(trace.occupancy.shape[0]):
            final = int(trace.final_tokens[unit])
            rows += [(layer, unit, "final_tokens", final),
                     (layer, unit, "peak_tokens", int(trace.peak_tokens[unit])),
                     (layer, unit, "mean_tokens", f"{trace.mean_tokens[unit]:.3f}"),
                     (layer, unit, "dead_blocks_max", int(trace.dead_blocks[unit].max())),
                     (layer, unit, "retained_fraction", f"{final / pattern.seq_len:.6f}")]
    reduction = analysis.kv_reduction(schedule)
    rows.append(("all", "all", "kv_reduction_percent", f"{reduction:.4f}"))
    _write_report(args, cfg, rows, {"kv_reduction_percent": reduction})
    print(f"KV cache reduction: {reduction:.2f}%")
    return 0


def _write_report(args, cfg: CliConfigFile, rows, summary: dict) -> None:
    out = args.out or cfg.out
    if not out:
        return
    fmt = args.format or cfg.format or "csv"
    if fmt == "csv":
        _emit(_csv(rows), out)
    elif fmt == "json":
        _emit(json.dumps(summary, indent=2) + "\n", out)
    else:
        raise ConfigError(f"reports support csv or json, not {fmt!r}", "format")


def cmd_selftest(args) -> int:
    rows = run_selftest(args.seed, args.instances, corrupt_mask=args.corrupt_mask)
    table = rows_to_csv(rows)
    if args.out:
        _emit(table, args.out)
    failed = [r for r in rows if not r.passed]
    print(f"selftest seed={args.seed}: {len(rows) - len(failed)}/{len(rows)} checks passed")
    for r in failed[:20]:
        print(f"FAIL {r.config_hash} {r.check}: {r.max_rel_error:.3e} > {r.tolerance:g}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s2attn", description="Strided context-sharding masks and reports")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="JSON config document")
        p.add_argument("--out", help="output path ('-' for stdout)")
        return p

    pattern = sub.add_parser("pattern", help="render or verify masks").add_subparsers(dest="action", required=True)
    render = with_config(pattern.add_parser("render", help="draw one head's block mask"))
    render.add_argument("--head", type=int, default=0)
    render.add_argument("--format", choices=["text", "pgm"])
    with_config(pattern.add_parser("verify", help="check union, heterogeneity and cache efficiency"))

    report = sub.add_parser("report", help="FLOPs and KV-cache reports").add_subparsers(dest="kind", required=True)
    flops = with_config(report.add_parser("flops"))
    flops.add_argument("--head-dim", type=int, default=64)
    flops.add_argument("--format", choices=["csv", "json"])
    kv = with_config(report.add_parser("kvcache"))
    kv.add_argument("--format", choices=["csv", "json"])

    selftest = sub.add_parser("selftest", help="oracle-equivalence matrix on random instances")
    selftest.add_argument("--seed", type=int, default=0)
    selftest.add_argument("--instances", type=int, default=100)
    selftest.add_argument("--out", help="CSV table path")
    selftest.add_argument("--corrupt-mask", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return cmd_selftest(args)
        cfg = load_config_file(args.config)
        if args.command == "pattern":
            return cmd_render(args, cfg) if args.action == "render" else cmd_verify(args, cfg)
        return cmd_report_flops(args, cfg) if args.kind == "flops" else cmd_report_kvcache(args, cfg)
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
