"""Command line: run scenarios, compare traces, benchmark the deployment optimizer.

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .config import content_hash, load_config
from .domain import GAParams
from .errors import ConfigError, NoFeasibleSolution, TrustFedError
from .report import atomic_write, compare_csv, dumps, jsonl, read_trace, summary_csv, trace_jsonl

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
LOG_LEVELS = {"off": logging.CRITICAL + 1, "info": logging.INFO, "debug": logging.DEBUG}
OUTPUT_FILES = ("trace.jsonl", "summary.csv", "trust_log.jsonl", "manifest.json")

log = logging.getLogger("trustfed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _setup_logging() -> None:
    level = os.environ.get("TRUSTFED_LOG", "off").strip().lower() or "off"
    if level not in LOG_LEVELS:
        print(f"warning: TRUSTFED_LOG={level!r} not one of off|info|debug; using off", file=sys.stderr)
        level = "off"
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger("trustfed").setLevel(LOG_LEVELS[level])


def cmd_run(args) -> int:
    from .flsim import run_scenario

    cfg_path = Path(args.config)
    try:
        raw = cfg_path.read_bytes()
        cfg = load_config(cfg_path)
    except FileNotFoundError:
        print(f"error: config not found: {cfg_path}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {cfg_path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    if workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    traces, state = run_scenario(cfg, workers=workers)
    elapsed = time.perf_counter() - t0
    manifest = {
        "config_path": str(cfg_path),
        "output_dir": str(out),
        "scenario": cfg.name,
        "config_hash": content_hash(raw),
        "wall_clock_seconds": round(elapsed, 3),
        "rounds": len(traces),
        "version": __version__,
    }
    atomic_write(out / "trace.jsonl", trace_jsonl(traces))
    atomic_write(out / "summary.csv", summary_csv(traces))
    atomic_write(out / "trust_log.jsonl", jsonl(state.trust_log))
    atomic_write(out / "manifest.json", dumps(manifest) + "\n")
    final = traces[-1].global_accuracy if traces else float("nan")
    print(f"{cfg.name}: {len(traces)} rounds, final accuracy {final:.4f}, {elapsed:.1f}s -> {out}")
    return EXIT_OK


def _labels(paths) -> list[str]:
    base = [Path(p).parent.name if Path(p).name == "trace.jsonl" else Path(p).stem for p in paths]
    if len(set(base)) == len(base):
        return base
    return [f"{b}{i}" for i, b in enumerate(base)]


def cmd_compare(args) -> int:
    if len(args.traces) < 2:
        print("error: compare needs at least two traces", file=sys.stderr)
        return EXIT_USAGE
    try:
        traces = [read_trace(p) for p in args.traces]
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: not found", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    lengths = {len(t) for t in traces}
    if len(lengths) != 1:
        print(f"error: traces have differing round counts {sorted(lengths)}", file=sys.stderr)
        return EXIT_USAGE
    atomic_write(Path(args.out), compare_csv(traces, _labels(args.traces)))
    print(f"compared {len(traces)} traces over {lengths.pop()} rounds -> {args.out}")
    return EXIT_OK


def cmd_bench_opt(args) -> int:
    from .optimizer import brute_force_optimum, ga_optimize, load_instance

    try:
        ctx = load_instance(args.instance)
    except FileNotFoundError as exc:
        print(f"error: {exc.filename or args.instance}: not found", file=sys.stderr)
        return EXIT_USAGE
    except (TrustFedError, ValueError, KeyError) as exc:
        print(f"error: {args.instance}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.oracle and ctx.n > 20:
        print(f"error: --oracle supports at most 20 devices, instance has {ctx.n}", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()
    try:
        res = ga_optimize(ctx, GAParams(), args.seed)
    except NoFeasibleSolution as exc:
        print(str(exc))
        return EXIT_RUNTIME
    dt = time.perf_counter() - t0
    ids = [ctx.ids[i] for i in res.chosen.indices]
    print(f"selection: {' '.join(ids) if ids else '(empty)'}")
    print(f"bits: {''.join(map(str, res.chosen.bits))}")
    print("objectives: " + " ".join(f"f{i + 1}={v:.6f}" for i, v in enumerate(res.objectives)))
    print(f"fitness: {res.fitness:.6f}")
    print(f"pareto_size: {len(res.pareto)} generations: {res.generations} seconds: {dt:.3f}")
    if args.oracle:
        best, fit = brute_force_optimum(ctx)
        ratio = res.fitness / fit if fit > 0 else 1.0
        print(f"oracle_selection: {' '.join(ctx.ids[i] for i in best.indices) or '(empty)'}")
        print(f"oracle_fitness: {fit:.6f}")
        print(f"ratio: {ratio:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trustfed", description="Trust-aware on-demand federated learning simulator")
    p.add_argument("--version", action="version", version=f"trustfed {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    r = sub.add_parser("run", help="run one scenario config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--workers", type=int, default=None, help="parallel local-training workers (default: cores)")
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("compare", help="merge round traces into one CSV")
    c.add_argument("traces", nargs="+")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    b = sub.add_parser("bench-opt", help="run the deployment optimizer on an instance file")
    b.add_argument("--instance", required=True)
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--oracle", action="store_true", help="also enumerate every selection (n <= 20)")
    b.set_defaults(func=cmd_bench_opt)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # runtime failure; details at debug level
        log.debug("unhandled error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
