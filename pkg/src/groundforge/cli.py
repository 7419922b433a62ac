"""Single entry point for the toolchain.

Subcommands: annotate, curate, review-serve, evaluate, stats, stub-serve,
bbox-derive. Exit codes: 0 ok, 2 usage/config error, 3 partial failure
(quarantined or failed items exist), 4 fatal.
"""
from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
from pathlib import Path

from . import curation
from .config import load_config
from .datastore import ShardSet, atomic_write, compute_stats, dump_record, merge_stats
from .errors import ConfigError, GroundforgeError
from .gateway import StubBackend, StubServer
from .metrics import (
    CATEGORIES,
    build_box_pairs,
    build_mask_pairs,
    format_report_table,
    read_prediction_file,
    report,
)
from .pipeline import make_client, run_pipeline
from .review_service import ReviewServer

logger = logging.getLogger("groundforge")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARTIAL = 3
EXIT_FATAL = 4


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="key = value config file")
    parser.add_argument("--set", dest="overrides", metavar="KEY=VALUE",
                        action="append", default=[],
                        help="override a config key (repeatable)")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="stub backend seed (shorthand for --set stub_seed=N)")


def _load_config(args):
    overrides = list(args.overrides)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"stub_seed={args.seed}")
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groundforge",
        description="Referring-expression segmentation dataset tooling: "
                    "automatic annotation, benchmark curation, and evaluation.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for info, -vv for debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("annotate", help="run the three-phase annotation pipeline")
    p.add_argument("--manifest", required=True, metavar="FILE",
                   help="JSONL of {image_id, uri, width, height}")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.add_argument("--halt-after", type=int, metavar="N",
                   help="journal at most N new images this invocation, then stop")
    _add_config_args(p)

    p = sub.add_parser("curate", help="screen, refine and assemble a benchmark")
    p.add_argument("--shards", required=True, metavar="DIR",
                   help="annotated shard set to draw candidates from")
    p.add_argument("--out", required=True, metavar="DIR", help="benchmark directory")
    p.add_argument("--skip-refine", action="store_true",
                   help="skip matting-based boundary refinement")
    _add_config_args(p)

    p = sub.add_parser("review-serve", help="serve the human-review API")
    p.add_argument("--manifest", required=True, metavar="FILE",
                   help="benchmark manifest JSON")
    p.add_argument("--audit", metavar="FILE",
                   help="audit log path (default: <manifest>.audit.jsonl)")
    p.add_argument("--snapshot", metavar="FILE",
                   help="write a manifest snapshot here on shutdown")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0,
                   help="0 picks a free port (printed on startup)")

    p = sub.add_parser("evaluate", help="score predictions against a benchmark")
    p.add_argument("--gt", required=True, metavar="FILE", help="ground-truth JSONL")
    p.add_argument("--pred", required=True, metavar="FILE", help="prediction JSONL")
    p.add_argument("--mode", choices=("mask", "bbox"), default="mask")
    p.add_argument("--metrics", default="giou,ciou",
                   help="comma list for mask mode (default giou,ciou)")
    p.add_argument("--thresholds", default="0.5",
                   help="comma list of IoU thresholds for bbox mode")
    p.add_argument("--name", default=None, help="method name for the table row")
    p.add_argument("--out-json", metavar="FILE", help="write the JSON report here")
    p.add_argument("--out-table", metavar="FILE", help="write the text table here")
    p.add_argument("--no-per-category", action="store_true",
                   help="overall scores only")

    p = sub.add_parser("stats", help="corpus statistics over a shard set")
    p.add_argument("shards", metavar="DIR", help="shard set directory")
    p.add_argument("--out-json", metavar="FILE", help="write full stats JSON here")

    p = sub.add_parser("stub-serve", help="serve the deterministic stub backend")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shrink", type=int, default=0,
                   help="degrade referrer masks by this many pixels")
    p.add_argument("--multibox", type=int, default=1,
                   help="candidate boxes for the first grounded phrase")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)

    p = sub.add_parser("bbox-derive", help="finalize a reviewed benchmark and "
                                           "export it with its bbox twin")
    p.add_argument("--manifest", required=True, metavar="FILE")
    p.add_argument("--audit", metavar="FILE", help="replay this audit log first")
    p.add_argument("--out", required=True, metavar="DIR", help="export directory")

    return parser


# -- commands ---------------------------------------------------------------------


def cmd_annotate(args) -> int:
    config = _load_config(args)
    report = run_pipeline(args.manifest, args.out, config,
                          halt_after=args.halt_after)
    summary = report.to_json()
    print(json.dumps(summary, sort_keys=True))
    if report.partial:
        print(f"halted early; resume with the same command", file=sys.stderr)
        return EXIT_PARTIAL
    if report.failed or report.filter_errors or report.generation_errors:
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_curate(args) -> int:
    config = _load_config(args)
    client = make_client(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = list(ShardSet.open(args.shards).iter_records())
    logger.info("curate: %d candidate records", len(records))

    categorized, rejects, quarantined = curation.classify_and_screen(records, client)
    if not args.skip_refine:
        categorized = [
            curation.refine_boundary(r, client, band=config.trimap_band,
                                     alpha_threshold=config.alpha_threshold)
            for r in categorized
        ]
    manifest = curation.assemble_benchmark(
        categorized, config.quotas, name=config.benchmark_name,
        allow_short=config.allow_short)
    manifest.save(out / "manifest.json")
    atomic_write(out / "screen_rejects.jsonl",
                 "".join(dump_record(r) for r in rejects).encode("utf-8"))
    atomic_write(out / "quarantine.jsonl",
                 "".join(dump_record(r) for r in quarantined).encode("utf-8"))
    counts = manifest.category_counts(statuses=("pending",))
    print(json.dumps({"items": len(manifest.items), "per_category": counts,
                      "rejected": len(rejects), "quarantined": len(quarantined)},
                     sort_keys=True))
    return EXIT_PARTIAL if quarantined else EXIT_OK


def _serve(server, label: str) -> int:
    stop = {"fired": False}

    def handler(_signum, _frame):
        stop["fired"] = True
        raise KeyboardInterrupt

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
    print(f"{label} listening on {server.base_url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return EXIT_OK


def cmd_review_serve(args) -> int:
    manifest = curation.BenchmarkManifest.load(args.manifest)
    audit_path = args.audit or f"{args.manifest}.audit.jsonl"
    store = curation.ReviewStore(manifest, audit_path)
    server = ReviewServer(store, host=args.host, port=args.port)
    code = _serve(server, "review service")
    if args.snapshot:
        store.snapshot(args.snapshot)
    return code


def cmd_stub_serve(args) -> int:
    backend = StubBackend(seed=args.seed, shrink=args.shrink, multibox=args.multibox)
    server = StubServer(backend, host=args.host, port=args.port)
    return _serve(server, f"stub backend ({backend.describe()})")


def cmd_evaluate(args) -> int:
    gt_records = [json.loads(line) for line in open(args.gt, encoding="utf-8")
                  if line.strip()]
    predictions = read_prediction_file(args.pred)
    per_category = not args.no_per_category
    if per_category and any("category" not in r for r in gt_records):
        print("warning: ground truth lacks categories; reporting overall only",
              file=sys.stderr)
        per_category = False

    name = args.name or Path(args.pred).stem
    rows = []
    if args.mode == "mask":
        pairs, missing = build_mask_pairs(gt_records, predictions)
        metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
        for metric in metrics:
            rows.append((name, report(pairs, metric, per_category=per_category)))
    else:
        pairs, missing = build_box_pairs(gt_records, predictions)
        for raw in args.thresholds.split(","):
            tau = float(raw)
            rows.append((name, report(pairs, "acc", threshold=tau,
                                      per_category=per_category)))
    if missing:
        print(f"warning: {len(missing)} ground-truth ids had no prediction; "
              f"scored as empty", file=sys.stderr)

    table = format_report_table(rows)
    print(table, end="")
    if args.out_table:
        atomic_write(Path(args.out_table), table.encode("utf-8"))
    if args.out_json:
        payload = {
            "method": name,
            "mode": args.mode,
            "missing_predictions": len(missing),
            "reports": [r.to_json() for _n, r in rows],
        }
        atomic_write(Path(args.out_json),
                     (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8"))
    return EXIT_OK


def cmd_stats(args) -> int:
    shardset = ShardSet.open(args.shards)
    # per-shard stats merged through the monoid; equals a single pass
    partials = []
    for entry in shardset.entries:
        single = ShardSet(root=shardset.root, entries=[entry])
        partials.append(compute_stats(single.iter_records()))
    stats = compute_stats([])
    for partial in partials:
        stats = merge_stats(stats, partial)
    print(f"records:          {stats.count}")
    print(f"mean word count:  {stats.mean_words:.2f}")
    print(f"median words:     {stats.median_words:.1f}")
    print(f"empty masks:      {stats.empty_masks}")
    if args.out_json:
        atomic_write(Path(args.out_json),
                     (json.dumps(stats.to_json(), sort_keys=True, indent=2) + "\n")
                     .encode("utf-8"))
    return EXIT_OK


def cmd_bbox_derive(args) -> int:
    manifest = curation.BenchmarkManifest.load(args.manifest)
    if args.audit and Path(args.audit).exists():
        audit = [json.loads(line) for line in open(args.audit, encoding="utf-8")
                 if line.strip()]
        curation.apply_audit_log(manifest, audit)
    if not manifest.finalized:
        curation.finalize_benchmark(manifest)
    paths = curation.export_benchmark(manifest, args.out)
    manifest.save(Path(args.out) / "manifest.final.json")
    print(json.dumps({"items": len(curation.accepted_items(manifest)),
                      "exports": paths}, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "annotate": cmd_annotate,
    "curate": cmd_curate,
    "review-serve": cmd_review_serve,
    "evaluate": cmd_evaluate,
    "stats": cmd_stats,
    "stub-serve": cmd_stub_serve,
    "bbox-derive": cmd_bbox_derive,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GroundforgeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
