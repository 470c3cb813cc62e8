"""Command-line interface: ``lshknn <subcommand> [options]``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .diffusion import DiffusionParams, NonConvergenceError, diffuse_queries, normalized_operator
from .eval import edge_recall, mean_average_precision, read_ground_truth, read_rankings, write_rankings
from .graphbuild import build_graph, default_workers
from .sparse import DEFAULT_THRESHOLD, GRAPH_VERSION, read_graph, write_graph
from .vecstore import load_fvecs

logger = logging.getLogger("lshknn")

_METHODS = ("lsh", "multiprobe", "bruteforce")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _add_common(p, workers=True):
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    if workers:
        p.add_argument("--workers", type=_positive_int, default=default_workers(),
                       help="worker threads (default: all CPUs)")


def _add_build_flags(p):
    p.add_argument("--input", required=True, help="descriptors in fvecs format")
    p.add_argument("--bits", type=_positive_int, default=6, help="hash bits per table (default 6)")
    p.add_argument("--tables", type=_positive_int, default=20, help="hash tables (default 20)")
    p.add_argument("--gamma", type=float, default=None,
                   help="fraction of 1-neighbour buckets probed (default 0.5, multiprobe only)")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help=f"edge similarity threshold (default {DEFAULT_THRESHOLD})")
    p.add_argument("--seed", type=int, default=0, help="hyperplane and probe seed (default 0)")
    p.add_argument("--max-bucket-warn", type=_positive_int, default=None,
                   help="warn about buckets larger than this")
    p.add_argument("--no-normalize", action="store_true", help="skip L2 normalization")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lshknn", description="LSH kNN graphs and diffusion retrieval.")
    parser.add_argument("--version", action="version",
                        version=f"lshknn {__version__} (graph format {GRAPH_VERSION})")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("build-graph", help="build an affinity graph file")
    _add_build_flags(p)
    p.add_argument("--method", choices=_METHODS, default=None, help="builder (default lsh)")
    p.add_argument("--multi-probe", action="store_true", help="same as --method multiprobe")
    p.add_argument("--output", required=True, help="graph file to write")
    p.add_argument("--report", help="also write the build report JSON here")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    _add_common(p)

    p = sub.add_parser("diffuse", help="rank the dataset for each query by diffusion")
    p.add_argument("--graph", required=True)
    p.add_argument("--input", required=True, help="dataset descriptors (fvecs)")
    p.add_argument("--queries", required=True, help="query descriptors (fvecs)")
    p.add_argument("--alpha", type=float, default=0.99)
    p.add_argument("--k-seed", type=_positive_int, default=10)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=_positive_int, default=200)
    p.add_argument("--row-topk", type=_positive_int, default=None,
                   help="keep only each node's k strongest edges before normalizing")
    p.add_argument("--top", type=_positive_int, default=None,
                   help="write only the first N items per query (default all)")
    p.add_argument("--strict", action="store_true", help="exit 2 if any solve fails to converge")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--output", required=True, help="rankings file to write")
    p.add_argument("--force", action="store_true")
    _add_common(p)

    p = sub.add_parser("evaluate", help="per-query AP and mAP of a rankings file")
    p.add_argument("--rankings", required=True)
    p.add_argument("--gt", required=True)
    _add_common(p, workers=False)

    p = sub.add_parser("graph-recall", help="edge recall of a graph against an exact one")
    p.add_argument("--approx", required=True)
    p.add_argument("--oracle", required=True)
    _add_common(p, workers=False)

    p = sub.add_parser("bench", help="time several builders on one dataset, print JSON")
    _add_build_flags(p)
    p.add_argument("--methods", default="lsh,bruteforce",
                   help="comma-separated builders (default lsh,bruteforce)")
    p.add_argument("--output", help="also write the JSON here")
    p.add_argument("--force", action="store_true")
    _add_common(p)
    return parser


def _check_clobber(path, force):
    if path and os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def _load(path, no_normalize):
    return load_fvecs(path, normalize=not no_normalize)


def _report_dict(report):
    d = report.to_dict()
    d["total_seconds"] = report.total_seconds
    return d


def _build(args, method, ds):
    gamma = 0.5 if args.gamma is None else args.gamma
    return build_graph(ds, method, bits=args.bits, tables=args.tables, gamma=gamma,
                       threshold=args.threshold, seed=args.seed, workers=args.workers,
                       max_bucket_warn=args.max_bucket_warn)


def _resolve_method(args):
    method = args.method
    if args.multi_probe:
        if method not in (None, "multiprobe"):
            raise UsageError(f"--multi-probe conflicts with --method {method}")
        method = "multiprobe"
    method = method or "lsh"
    if args.gamma is not None:
        if method == "bruteforce":
            raise UsageError("--gamma has no meaning with --method bruteforce")
        if method == "lsh":
            logger.warning("--gamma is ignored without multi-probe")
    return method


def cmd_build_graph(args, out):
    method = _resolve_method(args)
    _check_clobber(args.output, args.force)
    _check_clobber(args.report, args.force)
    ds = _load(args.input, args.no_normalize)
    graph, report = _build(args, method, ds)
    write_graph(args.output, graph)
    text = json.dumps(_report_dict(report), indent=2)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    out.write(text + "\n")
    return 0


def cmd_diffuse(args, out):
    params = DiffusionParams(args.alpha, args.k_seed, args.tol, args.max_iters)
    _check_clobber(args.output, args.force)
    graph = read_graph(args.graph)
    ds = _load(args.input, args.no_normalize)
    queries = _load(args.queries, args.no_normalize)
    if graph.n != ds.count:
        raise ValueError(f"graph has {graph.n} nodes but dataset has {ds.count} rows")
    if queries.count and queries.dim != ds.dim:
        raise ValueError(f"queries have dimension {queries.dim}, dataset {ds.dim}")
    S, isolated = normalized_operator(graph, args.row_topk)
    rankings = diffuse_queries(queries.data, ds, S, params, workers=args.workers,
                               strict=args.strict)
    if args.top:
        rankings = [r.top(args.top) for r in rankings]
    write_rankings(args.output, rankings)
    unconverged = sum(not r.converged for r in rankings)
    out.write(f"{len(rankings)} queries diffused, {unconverged} unconverged, "
              f"{isolated.size} isolated nodes\n")
    return 0


def cmd_evaluate(args, out):
    rankings = read_rankings(args.rankings)
    gt = read_ground_truth(args.gt)
    m, aps = mean_average_precision(rankings, gt, return_aps=True)
    for r, ap in zip(rankings, aps):
        out.write(f"query {r.query} AP {ap:.6f}\n")
    out.write(f"mAP {m:.6f}\n")
    return 0


def cmd_graph_recall(args, out):
    approx = read_graph(args.approx)
    oracle = read_graph(args.oracle)
    if not np.isclose(approx.threshold, oracle.threshold):
        logger.warning("graphs were built with different thresholds (%g vs %g)",
                       approx.threshold, oracle.threshold)
    out.write(f"recall {edge_recall(approx, oracle):.6f}\n")
    out.write(f"approx_edges {approx.nnz}\noracle_edges {oracle.nnz}\n")
    return 0


def cmd_bench(args, out):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in _METHODS]
    if bad or not methods:
        raise UsageError(f"unknown methods {bad}; choose from {', '.join(_METHODS)}")
    _check_clobber(args.output, args.force)
    ds = _load(args.input, args.no_normalize)
    reports = [_report_dict(_build(args, m, ds)[1]) for m in methods]
    text = json.dumps(reports, indent=2)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    out.write(text + "\n")
    return 0


_COMMANDS = {
    "build-graph": cmd_build_graph,
    "diffuse": cmd_diffuse,
    "evaluate": cmd_evaluate,
    "graph-recall": cmd_graph_recall,
    "bench": cmd_bench,
}


def run(argv=None, out=None) -> int:
    """Parse ``argv`` and run one subcommand; return the exit status."""
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("lshknn").setLevel(level)
    try:
        return _COMMANDS[args.command](args, out)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"lshknn: error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, NonConvergenceError) as e:
        print(f"lshknn: error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
