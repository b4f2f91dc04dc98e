"""Independent replicas of one model, run side by side.

A replica is fully described by (model, config, overrides, seed); nothing
mutable is shared, so the rows of a batched run are bitwise identical to the
rows of the same replica run alone, whatever the thread count.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import finance, predation, traffic
from .rng import RngState


class BatchError(ValueError):
    """Replicas in one batch do not share a schema."""


@dataclass(frozen=True)
class ModelSpec:
    name: str
    config_type: type
    columns: tuple[str, ...]
    init: Callable[[Any, RngState], Any]
    step: Callable[[Any, Any, RngState], Any]
    metrics: Callable[[Any], Any]

    def metric_rows(self, state: Any) -> list[dict[str, Any]]:
        out = self.metrics(state)
        return [out] if isinstance(out, Mapping) else list(out)


MODELS: dict[str, ModelSpec] = {
    "predation": ModelSpec(
        "predation", predation.PredationConfig,
        ("n_sheep", "n_wolves", "n_grass", "births_dropped"),
        predation.init_predation, predation.step_predation, predation.metrics_predation,
    ),
    "traffic": ModelSpec(
        "traffic", traffic.TrafficConfig,
        ("n_cars", "spawned", "exited", "signal_green"),
        traffic.init_traffic, traffic.advance_traffic, traffic.metrics_traffic,
    ),
    "finance": ModelSpec(
        "finance", finance.FinanceConfig,
        ("book_id", "price", "n_active_buys", "n_active_sells", "volume", "orders_dropped"),
        finance.init_finance, finance.step_market, finance.metrics_finance,
    ),
}


@dataclass(frozen=True)
class ReplicaConfig:
    seed: RngState
    overrides: Mapping[str, Any] = field(default_factory=dict)


def replica_seeds(master_seed: int, count: int) -> list[RngState]:
    root = RngState.from_seed(master_seed)
    return [root.split(k) for k in range(count)]


def resolve_threads(threads: int | str | None) -> int:
    """Explicit value, else ``$ABMX_THREADS``, else 1; ``auto`` means one per CPU."""
    if threads is None:
        threads = os.environ.get("ABMX_THREADS") or 1
    if threads in ("auto", 0, "0"):
        return os.cpu_count() or 1
    return max(1, int(threads))


def state_signature(obj: Any) -> Any:
    """Shapes and dtypes of every array reachable through dataclass fields."""
    if isinstance(obj, np.ndarray):
        return ("array", obj.dtype.str, obj.shape)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return (type(obj).__name__,) + tuple(
            (f.name, state_signature(getattr(obj, f.name))) for f in dataclasses.fields(obj)
            if f.name not in ("events", "trades")
        )
    if isinstance(obj, Mapping):
        return tuple((k, state_signature(v)) for k, v in obj.items())
    if isinstance(obj, (tuple, list)):
        return tuple(state_signature(v) for v in obj)
    return type(obj).__name__


@dataclass
class BatchTrajectory:
    columns: tuple[str, ...]
    rows: list[tuple]
    wall_ms: float = 0.0

    def for_replica(self, k: int) -> list[tuple]:
        return [r for r in self.rows if r[1] == k]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_value(v) for v in row])
        return buf.getvalue()


def format_value(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def configure(model: ModelSpec, base: Any, overrides: Mapping[str, Any]) -> Any:
    names = {f.name for f in dataclasses.fields(model.config_type)}
    unknown = sorted(set(overrides) - names)
    if unknown:
        raise BatchError(f"unknown {model.name} parameters: {unknown}")
    return dataclasses.replace(base, **overrides) if overrides else base


def run_replica(
    model: ModelSpec, config: Any, replica: ReplicaConfig, steps: int, index: int = 0,
    state: Any = None,
) -> list[tuple]:
    """Rows ``(step, replica, *metrics)`` for steps ``1..steps``."""
    cfg = configure(model, config, replica.overrides)
    if state is None:
        state = model.init(cfg, replica.seed)
    rows = []
    for t in range(1, steps + 1):
        state = model.step(state, cfg, replica.seed)
        for m in model.metric_rows(state):
            rows.append((t, index) + tuple(m[c] for c in model.columns))
    return rows


def run_batch(
    model: ModelSpec | str,
    config: Any,
    replicas: Sequence[ReplicaConfig],
    steps: int,
    threads: int | str | None = 1,
) -> BatchTrajectory:
    if isinstance(model, str):
        model = MODELS[model]
    if not replicas:
        raise BatchError("a batch needs at least one replica")
    if steps < 1:
        raise BatchError("steps must be >= 1")
    override_keys = {frozenset(r.overrides) for r in replicas}
    if len(override_keys) > 1:
        raise BatchError("replicas override different parameter sets")

    start = time.perf_counter()
    cfgs = [configure(model, config, r.overrides) for r in replicas]
    states = [model.init(c, r.seed) for c, r in zip(cfgs, replicas)]
    sig = state_signature(states[0])
    for k, s in enumerate(states[1:], start=1):
        if state_signature(s) != sig:
            raise BatchError(f"replica {k} has a different state schema than replica 0")

    def job(k: int) -> list[tuple]:
        return run_replica(model, config, replicas[k], steps, k, states[k])

    n_threads = min(resolve_threads(threads), len(replicas))
    if n_threads == 1:
        chunks = [job(k) for k in range(len(replicas))]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            chunks = list(pool.map(job, range(len(replicas))))
    wall_ms = (time.perf_counter() - start) * 1000.0
    rows = [row for chunk in chunks for row in chunk]
    return BatchTrajectory(("step", "replica") + model.columns, rows, wall_ms)
