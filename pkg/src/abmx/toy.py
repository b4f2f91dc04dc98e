"""Even/odd toy task: overwrite the first r even entries of ``a`` with the
first r odd entries of ``b``, r = min(#even, #odd)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import Field, FieldBundle, create_agents
from .kernels import UpdateBatch, oracle_paired_update, set_agents_rm, set_agents_sci


def _copy(slots, rows):
    return {"value": rows["value"]}


def run_toy(a: Sequence[int], b: Sequence[int], kernel: str = "rm") -> list[int]:
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    agents = create_agents(len(a), len(a), [Field("value", "integer")])
    agents = agents.evolve(state=agents.state.updated({"value": a}))
    updates = UpdateBatch(FieldBundle({"value": b}, len(b)), b % 2 == 1)
    fn = {"rm": set_agents_rm, "sci": set_agents_sci, "oracle": oracle_paired_update}[kernel]
    return fn(agents, a % 2 == 0, updates, _copy).state["value"].tolist()
