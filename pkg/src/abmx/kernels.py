"""Fixed-shape kernels for updating a runtime-sized subset of agents.

Two ways of pairing the k-th selected slot with the k-th valid update:

* Rank-Match: label both sides with masked prefix sums and match equal
  labels across all (slot, update) pairs.  No loop, every slot decides its
  own candidate independently.
* Sort-Count-Iterate: stably move selected indices to the front on both
  sides, count ``r = min(p, q)`` and walk the first ``r`` pairs in order.
  Slower, but the loop body sees the running set.

Both produce identical results whenever the per-pair update does not depend
on iteration order; :func:`oracle_paired_update` is the plain loop both are
tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Callable, Literal, Mapping

import numpy as np

from .core import (
    PLACEHOLDER_ID,
    AgentSet,
    DomainError,
    FieldBundle,
    SchemaError,
    Slots,
    merge_state,
)

Apply = Callable[[Slots, FieldBundle], Mapping[str, Any]]
LoopBody = Callable[[AgentSet, int, int, int], AgentSet]

# Above this many (slot, update) pairs the all-pairs match table is replaced
# by the equivalent label lookup.
DENSE_PAIR_LIMIT = 1 << 16


@dataclass(frozen=True)
class UpdateBatch:
    """Candidate update rows plus the mask saying which rows are real."""

    values: FieldBundle
    valid: np.ndarray

    def __post_init__(self) -> None:
        valid = np.array(self.valid, dtype=bool)
        if valid.ndim != 1 or valid.shape[0] != self.values.length:
            raise SchemaError(f"valid mask shape {valid.shape} != ({self.values.length},)")
        valid.setflags(write=False)
        object.__setattr__(self, "valid", valid)

    @property
    def size(self) -> int:
        return self.values.length


@dataclass(frozen=True)
class SelectionResult:
    indices: np.ndarray
    count: int

    @property
    def selected(self) -> np.ndarray:
        return self.indices[: self.count]


def _as_mask(mask: Any, n: int, what: str = "mask") -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype != np.bool_:
        raise SchemaError(f"{what} must be boolean, got {m.dtype}")
    if m.shape != (n,):
        raise SchemaError(f"{what} has shape {m.shape}, expected ({n},)")
    return m


def compute_ranks(mask: Any) -> np.ndarray:
    """Inclusive prefix sum of ``mask`` zeroed where ``mask`` is false."""
    m = np.asarray(mask, dtype=bool)
    return np.cumsum(m, dtype=np.int64) * m


def front_compact(mask: Any) -> np.ndarray:
    """Stable partition of ``0..n-1``: true positions first, both halves in order."""
    return np.argsort(~np.asarray(mask, dtype=bool), kind="stable")


def select_agents(agents: AgentSet, predicate: Callable[[Slots], Any]) -> SelectionResult:
    mask = _as_mask(predicate(agents.slots()), agents.capacity, "predicate result")
    return SelectionResult(front_compact(mask), int(mask.sum()))


def placeholder_key(agents: AgentSet, key: Any, direction: str = "ascending") -> np.ndarray:
    """Copy of ``key`` with placeholder slots pinned to the tail for ``direction``."""
    pin = np.inf if direction == "ascending" else -np.inf
    return np.where(agents.active, np.asarray(key, dtype=np.float64), pin)


def sort_permutation(key: Any, direction: Literal["ascending", "descending"] = "ascending") -> np.ndarray:
    k = np.asarray(key, dtype=np.float64)
    if direction == "ascending":
        return np.argsort(k, kind="stable")
    if direction == "descending":
        return np.argsort(-k, kind="stable")
    raise DomainError(f"direction must be 'ascending' or 'descending', got {direction!r}")


def sort_agents(
    agents: AgentSet, key: Any, direction: Literal["ascending", "descending"] = "ascending"
) -> AgentSet:
    """Stable reorder of every column by ``key``; ties keep slot order."""
    k = np.asarray(key, dtype=np.float64)
    if k.shape != (agents.capacity,):
        raise SchemaError(f"sort key shape {k.shape} != ({agents.capacity},)")
    if np.isnan(k).any() or not np.isfinite(k[agents.active]).all():
        raise DomainError("sort key must be finite on active slots (non-finite values pin placeholders only)")
    return agents.permuted(sort_permutation(k, direction))


# -- pairing ------------------------------------------------------------------

def _rank_match_dense(ranks_a: np.ndarray, ranks_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    match = (ranks_a[:, None] == ranks_b[None, :]) & (ranks_a[:, None] != 0)
    return match.any(axis=1), match.argmax(axis=1)


def _rank_match_lookup(ranks_a: np.ndarray, ranks_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q = int(ranks_b.max(initial=0))
    row_of_rank = np.zeros(q + 1, dtype=np.int64)
    nz = np.flatnonzero(ranks_b)
    row_of_rank[ranks_b[nz]] = nz
    has = (ranks_a > 0) & (ranks_a <= q)
    return has, np.where(has, row_of_rank[np.minimum(ranks_a, q)], 0)


def rank_match(
    target_mask: np.ndarray, valid: np.ndarray, method: Literal["auto", "dense", "lookup"] = "auto"
) -> tuple[np.ndarray, np.ndarray]:
    """For every slot: whether it receives an update, and which update row.

    Slots without a partner get row 0, mirroring a first-maximum reduction
    over an all-false match row.  ``dense`` builds the full match table;
    ``lookup`` inverts the update labels instead and gives the same answer
    in linear memory.
    """
    ranks_a, ranks_b = compute_ranks(target_mask), compute_ranks(valid)
    if method == "auto":
        method = "dense" if ranks_a.size * ranks_b.size <= DENSE_PAIR_LIMIT else "lookup"
    if ranks_b.size == 0:
        return np.zeros(ranks_a.size, dtype=bool), np.zeros(ranks_a.size, dtype=np.int64)
    if method == "dense":
        return _rank_match_dense(ranks_a, ranks_b)
    if method == "lookup":
        return _rank_match_lookup(ranks_a, ranks_b)
    raise DomainError(f"unknown rank-match method {method!r}")


def grouped_ranks(mask: Any, groups: Any) -> np.ndarray:
    """Ranks restarted within each group: k-th selected member of a group gets k."""
    m = np.asarray(mask, dtype=bool)
    g = np.asarray(groups, dtype=np.int64)
    order = np.lexsort((np.arange(m.size), g))
    sel = m[order]
    counts = np.cumsum(sel, dtype=np.int64)
    g_sorted = g[order]
    starts = np.r_[True, g_sorted[1:] != g_sorted[:-1]] if m.size else np.zeros(0, dtype=bool)
    # subtract the running count reached before each group starts
    before = np.where(starts, counts - sel, 0)
    before = np.maximum.accumulate(before) if m.size else before
    ranks = np.zeros(m.size, dtype=np.int64)
    ranks[order] = (counts - before) * sel
    return ranks


def grouped_rank_match(
    mask_a: Any, group_a: Any, mask_b: Any, group_b: Any
) -> tuple[np.ndarray, np.ndarray]:
    """Rank-Match within groups: the k-th selected ``a`` of group g pairs with
    the k-th selected ``b`` of the same group."""
    ra, rb = grouped_ranks(mask_a, group_a), grouped_ranks(mask_b, group_b)
    ga, gb = np.asarray(group_a, dtype=np.int64), np.asarray(group_b, dtype=np.int64)
    nb = len(rb)
    has = np.zeros(len(ra), dtype=bool)
    src = np.zeros(len(ra), dtype=np.int64)
    if nb == 0 or not ra.any() or not rb.any():
        return has, src
    # one composite label per (group, rank); equal labels match
    width = int(max(ra.max(), rb.max())) + 1
    gmin = min(int(ga.min()), int(gb.min()))
    label_a = np.where(ra > 0, (ga - gmin) * width + ra, -1)
    label_b = np.where(rb > 0, (gb - gmin) * width + rb, -2)
    order = np.argsort(label_b, kind="stable")
    pos = np.searchsorted(label_b[order], label_a)
    pos = np.minimum(pos, nb - 1)
    cand = order[pos]
    has = (label_a >= 0) & (label_b[cand] == label_a)
    src = np.where(has, cand, 0)
    return has, src


def sci_pairs(target_mask: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First ``r = min(p, q)`` (slot, update row) pairs after front compaction."""
    r = min(int(target_mask.sum()), int(valid.sum()))
    return front_compact(target_mask)[:r], front_compact(valid)[:r]


def _check_batch(agents: AgentSet, target_mask: Any, updates: UpdateBatch) -> np.ndarray:
    if not isinstance(updates, UpdateBatch):
        raise SchemaError(f"updates must be an UpdateBatch, got {type(updates).__name__}")
    return _as_mask(target_mask, agents.capacity, "target_mask")


# -- paired updates -------------------------------------------------------------

def set_agents_rm(
    agents: AgentSet,
    target_mask: Any,
    updates: UpdateBatch,
    apply: Apply,
    *,
    method: Literal["auto", "dense", "lookup"] = "auto",
) -> AgentSet:
    """Rank-Match: slot with the k-th true ``target_mask`` entry receives
    ``apply(slot, row)`` for the k-th valid update row."""
    mask = _check_batch(agents, target_mask, updates)
    has, src = rank_match(mask, updates.valid, method)
    if not has.any():
        return agents
    produced = apply(agents.slots(), updates.values.take(src))
    return replace(agents, state=merge_state(agents, produced, has))


def set_agents_sci(
    agents: AgentSet,
    target_mask: Any,
    updates: UpdateBatch,
    apply: Apply | None = None,
    *,
    loop_body: LoopBody | None = None,
) -> AgentSet:
    """Sort-Count-Iterate: walk the first ``min(p, q)`` compacted pairs in order.

    With ``apply`` each iteration updates one slot from one row, seeing the
    effects of earlier iterations.  ``loop_body(agents, k, slot, row)`` takes
    over the whole iteration instead, for updates that need the running set
    or the iteration index.
    """
    mask = _check_batch(agents, target_mask, updates)
    if (apply is None) == (loop_body is None):
        raise SchemaError("pass exactly one of apply or loop_body")
    slots, rows = sci_pairs(mask, updates.valid)
    if loop_body is not None:
        current = agents
        for k, (i, j) in enumerate(zip(slots.tolist(), rows.tolist())):
            current = loop_body(current, k, i, j)
            if current.capacity != agents.capacity:
                raise SchemaError("loop body changed the set capacity")
        return current
    if len(slots) == 0:
        return agents
    work = {name: np.array(col) for name, col in agents.state.items()}
    for i, j in zip(slots.tolist(), rows.tolist()):
        view = replace(
            agents.slots([i]),
            state=FieldBundle({name: col[i : i + 1] for name, col in work.items()}, 1),
        )
        produced = apply(view, updates.values.take([j]))
        one = view.state.updated(produced)
        for name in produced:
            work[name][i] = one[name][0]
    return replace(agents, state=FieldBundle(work, agents.capacity))


def set_agents_mask(agents: AgentSet, mask: Any, update_fn: Callable[[Slots], Mapping[str, Any]]) -> AgentSet:
    """Independent per-slot update on ``mask`` slots; no pairing involved."""
    m = _as_mask(mask, agents.capacity)
    if not m.any():
        return agents
    return replace(agents, state=merge_state(agents, update_fn(agents.slots()), m))


def oracle_paired_update(
    agents: AgentSet, target_mask: Any, updates: UpdateBatch, apply: Apply
) -> AgentSet:
    """Reference semantics: plain Python loops, one slot at a time."""
    mask = [bool(x) for x in _check_batch(agents, target_mask, updates)]
    valid = [bool(x) for x in updates.valid]
    chosen = [i for i in range(len(mask)) if mask[i]]
    rows = [j for j in range(len(valid)) if valid[j]]
    cols = {name: np.array(col) for name, col in agents.state.items()}
    for i, j in zip(chosen, rows):
        view = replace(agents.slots([i]), state=FieldBundle({k: v[i : i + 1] for k, v in cols.items()}, 1))
        out = apply(view, updates.values.take([j]))
        for name, value in out.items():
            cols[name][i] = np.asarray(value)[0]
    return replace(agents, state=FieldBundle(cols, agents.capacity))


# -- lifecycle ------------------------------------------------------------------

@dataclass(frozen=True)
class Placement:
    """Result of :func:`add_agents`: the new set and, per update row, the slot
    it landed in (``-1`` when the row was invalid or did not fit)."""

    agents: AgentSet
    slot_of_row: np.ndarray

    @property
    def placed(self) -> np.ndarray:
        return self.slot_of_row >= 0

    @property
    def num_placed(self) -> int:
        return int(self.placed.sum())


def _copy_rows(slots: Slots, rows: FieldBundle) -> dict[str, np.ndarray]:
    return {name: rows[name] for name in rows.names}


def add_agents(
    agents: AgentSet,
    updates: UpdateBatch,
    *,
    agent_type: int = 0,
    kernel: Literal["rm", "sci"] = "rm",
    apply: Apply | None = None,
) -> Placement:
    """Spawn one agent per valid update row into free slots.

    Free slots are the placeholders; pairing follows the chosen kernel, so
    when rows outnumber free slots only the first ``min(p, q)`` rows land.
    ``apply`` defaults to copying same-named state columns from the rows.
    """
    apply = apply or _copy_rows
    free = ~agents.active
    if kernel == "rm":
        has, src = rank_match(free, updates.valid)
        slots_filled = np.flatnonzero(has)
        rows_used = src[has]
        state_agents = set_agents_rm(agents, free, updates, apply)
    elif kernel == "sci":
        slots_filled, rows_used = sci_pairs(free, updates.valid)
        state_agents = set_agents_sci(agents, free, updates, apply)
    else:
        raise DomainError(f"unknown kernel {kernel!r}")

    slot_of_row = np.full(updates.size, -1, dtype=np.int64)
    slot_of_row[rows_used] = slots_filled
    n_new = len(slots_filled)
    if n_new == 0:
        return Placement(agents, slot_of_row)

    born = np.zeros(agents.capacity, dtype=bool)
    born[slots_filled] = True
    ids = np.array(agents.id)
    if agents.recycle_ids:
        ids[slots_filled] = slots_filled
    else:
        # ids follow row order so they do not depend on the kernel
        order = np.argsort(rows_used, kind="stable")
        ids[slots_filled[order]] = agents.next_id + np.arange(n_new)
    out = replace(
        state_agents,
        num_active=agents.num_active + n_new,
        active=agents.active | born,
        id=ids,
        agent_type=np.where(born, agent_type, agents.agent_type),
        age=np.where(born, 0, agents.age),
        next_id=agents.next_id if agents.recycle_ids else agents.next_id + n_new,
    )
    return Placement(out, slot_of_row)


__all__ = [
    "PLACEHOLDER_ID",
    "Placement",
    "SelectionResult",
    "UpdateBatch",
    "add_agents",
    "compute_ranks",
    "front_compact",
    "grouped_rank_match",
    "grouped_ranks",
    "oracle_paired_update",
    "placeholder_key",
    "rank_match",
    "sci_pairs",
    "select_agents",
    "set_agents_mask",
    "set_agents_rm",
    "set_agents_sci",
    "sort_agents",
    "sort_permutation",
]
