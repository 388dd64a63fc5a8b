"""``bench`` command line: run scenarios, check trace invariance, generate inputs.

Exit codes: 0 success, 1 runtime or I/O failure (including a failed
invariance check), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bench
from .apps.kmeans import DEFAULT_POINTS_PER_BLOCK, gen_point_store, miss_sequence_report
from .apps.wordcount import gen_word_store, text_blocks
from .blocks.store import BlockStore

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
GEN_KINDS = ("WordCount", "KMeans", "BlockSort", "BlockAccess")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _shape(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.replace("x", ",").split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must be comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bench", description="Oblivious primitive and application benchmarks.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="time one scenario and write a CSV row")
    r.add_argument("--kind", required=True, choices=list(bench.IMPLS))
    r.add_argument("--impl", required=True)
    size = r.add_mutually_exclusive_group()
    size.add_argument("--n", type=int, help="records, sequence length, nodes or blocks")
    size.add_argument("--blocks", type=int, help="alias of --n for block-based kinds")
    r.add_argument("--record-bytes", type=int, choices=(8, 16), default=8)
    r.add_argument("--k", type=int, default=5, help="KMeans clusters")
    r.add_argument("--iters", type=int, help="accesses per run (ArrayAccess, BlockAccess) or Lloyd iterations (KMeans)")
    r.add_argument("--bit-fraction", type=float, default=0.5,
                   help="share of set secret bits for Branching")
    r.add_argument("--reps", type=int, default=5)
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--csv", help="output file (default: stdout)")
    r.add_argument("--input", help="block file to use instead of generated input")
    r.add_argument("--centroids", help="KMeans: write the final centroid file here")

    c = sub.add_parser("check-oblivious", help="compare traces over random same-shape inputs")
    c.add_argument("--kind", required=True, choices=list(bench.IMPLS))
    c.add_argument("--impl")
    c.add_argument("--shape", required=True, type=_shape,
                   help="e.g. 64 (n or blocks), 30,30 (edit distance), 1000,5 (points,k)")
    c.add_argument("--pairs", type=int, default=20)
    c.add_argument("--seed", type=int, default=1)
    c.add_argument("--dump", help="write the traces of the first divergent (or last) pair")
    c.add_argument("--miss-report", action="store_true",
                   help="for KMeans-OramHash: report cache-event sequence entropy instead")
    c.add_argument("--cache-blocks", type=int, default=1)

    g = sub.add_parser("gen", help="write an input block file")
    g.add_argument("--kind", required=True, choices=GEN_KINDS)
    g.add_argument("--blocks", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--k", type=int, default=5, help="KMeans: number of blobs")
    g.add_argument("--points-per-block", type=int, default=DEFAULT_POINTS_PER_BLOCK)
    g.add_argument("--text", help="WordCount: build blocks from this text file instead")
    return p


def _cmd_run(a) -> int:
    n = a.n if a.n is not None else a.blocks
    if n is None and a.input is None:
        raise bench.UsageError("one of --n/--blocks (or --input) is required")
    if a.input is not None:
        n = BlockStore.open(a.input).count
    s = bench.Scenario(a.kind, a.impl, n, a.record_bytes, a.reps, a.seed, a.k, a.iters,
                       a.bit_fraction, a.input, a.centroids)
    m = bench.run_scenario(s)
    bench.emit_csv([m], a.csv if a.csv else sys.stdout)
    return EXIT_OK


def _cmd_check(a) -> int:
    if a.kind == "KMeans" and a.impl == "OramHash" and a.miss_report:
        pts, k = (a.shape + (0, 5))[:2]
        if pts < 1:
            raise bench.UsageError("shape for the miss report is points,k")
        n_blocks = -(-pts // DEFAULT_POINTS_PER_BLOCK)
        rep = miss_sequence_report(n_blocks, k, 2 * a.pairs, a.seed, a.cache_blocks)
        print(json.dumps(rep, indent=2))
        return EXIT_OK
    try:
        report = bench.check_oblivious(a.kind, a.shape, a.pairs, a.seed, a.impl)
    except bench.NotInvariant as e:
        print(f"refusing: {e}", file=sys.stderr)
        return EXIT_USAGE
    print("\n".join(report.lines()))
    if a.dump and report.first_traces:
        ta, tb = report.first_traces
        with open(a.dump, "w") as fh:
            ta.dump(fh)
        with open(a.dump + ".other", "w") as fh:
            tb.dump(fh)
    return EXIT_OK if report.passed else EXIT_RUNTIME


def _cmd_gen(a) -> int:
    if a.blocks < 1 and not a.text:
        raise bench.UsageError("--blocks must be positive")
    if a.kind == "WordCount":
        if a.text:
            with open(a.text, "rb") as fh:
                BlockStore.from_blocks(text_blocks(fh.read()), a.out).flush()
        else:
            gen_word_store(a.blocks, seed=a.seed, path=a.out).flush()
    elif a.kind == "KMeans":
        gen_point_store(a.blocks, k=a.k, seed=a.seed, points_per_block=a.points_per_block,
                        path=a.out).flush()
    else:
        bench.random_kv_store(a.blocks, np.random.default_rng(a.seed)).raw.tofile(a.out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        a = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    handler = {"run": _cmd_run, "check-oblivious": _cmd_check, "gen": _cmd_gen}[a.cmd]
    try:
        return handler(a)
    except bench.UsageError as e:
        print(f"bench: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, RuntimeError, ValueError) as e:
        print(f"bench: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
