"""Command line: ``abmx run``, ``abmx bench``, ``abmx toy``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import statistics
import sys
import tempfile
import time
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .batch import MODELS, BatchError, ReplicaConfig, replica_seeds, resolve_threads, run_batch
from .config import ConfigError, RunConfig, load_config, model_config
from .toy import run_toy

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

DEFAULT_LADDER = (10, 20, 50, 100, 200, 500)
DEFAULT_BENCH_STEPS = {"predation": 100, "traffic": 1000, "finance": 100}
WARMUP_STEPS = 5
MIN_BENCH_RUNS = 10

# shorthand flags mapped onto model parameters
_SHORTHAND = {"books": ("finance", "n_books"), "traders": ("finance", "n_traders"), "length": ("traffic", "length")}


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="sectioned key=value file or JSON manifest")
    p.add_argument("--model", choices=["predation", "traffic", "finance", "toy"])
    p.add_argument("--steps", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--threads", help="worker threads or 'auto' (fallback: $ABMX_THREADS)")
    p.add_argument("--out")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="model parameter override, repeatable")
    p.add_argument("--books", type=int)
    p.add_argument("--traders", type=int)
    p.add_argument("--length", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="abmx", description="fixed-capacity agent-based simulations")
    ap.add_argument("--version", action="version", version=f"abmx {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate and write a metrics CSV plus manifest")
    _common(run)
    run.add_argument("--replicas", type=int)
    run.add_argument("--a", type=_int_list, help="toy model: vector a")
    run.add_argument("--b", type=_int_list, help="toy model: vector b")

    bench = sub.add_parser("bench", help="time replica ladders with warmup subtraction")
    _common(bench)
    bench.add_argument("--ladder", type=_int_list, default=list(DEFAULT_LADDER))
    bench.add_argument("--runs", type=int, default=10)

    toy = sub.add_parser("toy", help="even/odd toy task through both kernels")
    toy.add_argument("--a", type=_int_list, default=[2, 3, 4, 6])
    toy.add_argument("--b", type=_int_list, default=[1, 4, 3])
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.model:
        if args.config and args.model != cfg.model:
            cfg.params = {}
        cfg.model = args.model
    for attr, key in (("steps", "steps"), ("master_seed", "master_seed"), ("out", "out_path")):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "replicas", None) is not None:
        cfg.replicas = args.replicas
    threads = args.threads
    if threads is not None:
        cfg.threads = threads if threads == "auto" else int(threads)
    for flag, (model, key) in _SHORTHAND.items():
        value = getattr(args, flag, None)
        if value is not None:
            if cfg.model != model:
                raise ConfigError(f"--{flag} only applies to --model {model}")
            cfg.params[key] = value
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.params[key.strip()] = value.strip()
    cfg.validate()
    return cfg


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def manifest_path(csv_path: Path) -> Path:
    return csv_path.with_name(csv_path.stem + ".manifest.json")


def _replicas(cfg: RunConfig, count: int) -> list[ReplicaConfig]:
    return [ReplicaConfig(seed) for seed in replica_seeds(cfg.master_seed, count)]


def cmd_toy(a: Sequence[int], b: Sequence[int]) -> int:
    print(f"a  = {list(a)}")
    print(f"b  = {list(b)}")
    for kernel in ("rm", "sci"):
        print(f"{kernel}: a'={run_toy(a, b, kernel)}")
    return EXIT_OK


def cmd_run(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.model == "toy":
        return cmd_toy(args.a or [2, 3, 4, 6], args.b or [1, 4, 3])
    mcfg = model_config(cfg)
    out = Path(cfg.out_path or f"{cfg.model}.csv")
    manifest = manifest_path(out)
    written: list[Path] = []
    try:
        replicas = _replicas(cfg, cfg.replicas)
        traj = run_batch(MODELS[cfg.model], mcfg, replicas, cfg.steps, cfg.threads)
        _atomic_write(out, traj.to_csv())
        written.append(out)
        resolved = RunConfig(cfg.model, cfg.steps, cfg.replicas, cfg.master_seed, cfg.threads,
                             str(out), dataclasses.asdict(mcfg))
        doc = {
            "abmx_version": __version__,
            "config": resolved.to_dict(),
            "replica_seeds": [s.key for s in (r.seed for r in replicas)],
            "rows": len(traj.rows),
            "wall_ms": traj.wall_ms,
        }
        _atomic_write(manifest, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(manifest)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    print(f"wrote {len(traj.rows)} rows to {out} ({traj.wall_ms:.1f} ms); manifest {manifest}")
    return EXIT_OK


def _time_batch(cfg: RunConfig, mcfg: Any, replicas: int, steps: int) -> float:
    reps = _replicas(cfg, replicas)
    start = time.perf_counter()
    run_batch(MODELS[cfg.model], mcfg, reps, steps, cfg.threads)
    return (time.perf_counter() - start) * 1000.0


def _iqr(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    q = statistics.quantiles(values, n=4, method="inclusive")
    return q[2] - q[0]


def bench_rows(cfg: RunConfig, ladder: Sequence[int], runs: int, steps: int,
               warmup: int = WARMUP_STEPS, timer=None) -> list[dict[str, Any]]:
    """Per rung: median(time of steps+warmup) - median(time of warmup), over ``runs`` repeats."""
    if runs < MIN_BENCH_RUNS:
        raise ConfigError(f"bench needs at least {MIN_BENCH_RUNS} runs per rung")
    mcfg = model_config(cfg)
    timer = timer or _time_batch
    rows = []
    for k in ladder:
        long_ms = [timer(cfg, mcfg, k, steps + warmup) for _ in range(runs)]
        short_ms = [timer(cfg, mcfg, k, warmup) for _ in range(runs)]
        base = statistics.median(short_ms)
        rows.append({
            "model": cfg.model,
            "replicas": k,
            "steps": steps,
            "wall_ms_median": statistics.median(long_ms) - base,
            "wall_ms_iqr": _iqr([x - base for x in long_ms]),
            "warmup_steps_excluded": warmup,
            "runs": runs,
            "threads": resolve_threads(cfg.threads),
        })
    return rows


def format_table(rows: Sequence[dict[str, Any]]) -> str:
    head = f"{'model':<10}{'replicas':>9}{'steps':>7}{'median ms':>12}{'iqr ms':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['model']:<10}{r['replicas']:>9}{r['steps']:>7}"
                     f"{r['wall_ms_median']:>12.2f}{r['wall_ms_iqr']:>10.2f}")
    return "\n".join(lines)


def cmd_bench(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.model == "toy":
        raise ConfigError("bench needs a simulation model")
    steps = args.steps if args.steps is not None else DEFAULT_BENCH_STEPS[cfg.model]
    rows = bench_rows(cfg, args.ladder, args.runs, steps)
    report = {"abmx_version": __version__, "protocol": {
        "warmup_steps": WARMUP_STEPS, "runs": args.runs,
        "wall_ms_median": "median(steps+warmup) - median(warmup)",
    }, "rows": rows}
    text = json.dumps(report, indent=2) + "\n"
    if cfg.out_path:
        _atomic_write(Path(cfg.out_path), text)
    print(format_table(rows))
    if not cfg.out_path:
        print(text, end="")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "toy":
            return cmd_toy(args.a, args.b)
        cfg = resolve_config(args)
        if args.command == "run":
            return cmd_run(cfg, args)
        return cmd_bench(cfg, args)
    except ConfigError as exc:
        print(f"abmx: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BatchError as exc:
        print(f"abmx: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"abmx: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
