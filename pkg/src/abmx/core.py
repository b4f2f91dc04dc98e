"""Fixed-capacity agent collections.

An :class:`AgentSet` never changes shape.  Dead agents stay in the arrays as
placeholder slots (``active == False``) holding the schema defaults, so every
operation maps arrays of length ``capacity`` to arrays of the same length.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence, Union

import numpy as np

from .rng import RngState

KINDS = {"integer": np.int64, "real": np.float64, "boolean": np.bool_}
_KIND_OF_DTYPE = {"i": "integer", "u": "integer", "f": "real", "b": "boolean"}

PLACEHOLDER_ID = -1


class SchemaError(ValueError):
    """Field names, kinds or shapes do not match what an operation expects."""


class CapacityError(ValueError):
    """A request does not fit inside a fixed capacity."""


class DomainError(ValueError):
    """An argument lies outside the values an operation accepts."""


def _as_column(name: str, values: Any) -> np.ndarray:
    arr = np.array(values)
    kind = _KIND_OF_DTYPE.get(arr.dtype.kind)
    if kind is None:
        raise SchemaError(f"field {name!r} has unsupported dtype {arr.dtype}")
    if arr.ndim == 0:
        raise SchemaError(f"field {name!r} must be at least one-dimensional")
    arr = arr.astype(KINDS[kind], copy=False)
    arr.setflags(write=False)
    return arr


def column_kind(arr: np.ndarray) -> str:
    return _KIND_OF_DTYPE[arr.dtype.kind]


class FieldBundle(Mapping[str, np.ndarray]):
    """Named, equal-length, read-only columns.

    Columns may carry trailing dimensions (e.g. one holding per book), but the
    leading dimension is shared by every column and fixed at construction.
    """

    __slots__ = ("_cols", "_length")

    def __init__(self, columns: Mapping[str, Any] | None = None, length: int | None = None):
        cols: dict[str, np.ndarray] = {}
        for name, values in (columns or {}).items():
            if not isinstance(name, str) or not name:
                raise SchemaError(f"field names must be non-empty strings, got {name!r}")
            cols[name] = _as_column(name, values)
        lengths = {c.shape[0] for c in cols.values()}
        if length is not None:
            lengths.add(int(length))
        if len(lengths) > 1:
            raise SchemaError(f"columns have unequal lengths {sorted(lengths)}")
        self._cols = cols
        self._length = lengths.pop() if lengths else 0

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, Any]], length: int | None = None) -> FieldBundle:
        seen: dict[str, Any] = {}
        for name, values in pairs:
            if name in seen:
                raise SchemaError(f"duplicate field name {name!r}")
            seen[name] = values
        return cls(seen, length)

    @property
    def length(self) -> int:
        return self._length

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._cols)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._cols[name]
        except KeyError:
            raise SchemaError(f"no field named {name!r}; have {self.names}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._cols)

    def __len__(self) -> int:
        return len(self._cols)

    def __getattr__(self, name: str) -> np.ndarray:
        if name.startswith("_"):
            raise AttributeError(name)
        try:
            return self._cols[name]
        except KeyError:
            raise AttributeError(name) from None

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v.tolist()!r}" for k, v in self._cols.items())
        return f"FieldBundle({inner})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FieldBundle):
            return NotImplemented
        return bundles_identical(self, other)

    __hash__ = None  # type: ignore[assignment]

    def schema(self) -> tuple[tuple[str, str, tuple[int, ...]], ...]:
        return tuple((k, column_kind(v), v.shape) for k, v in self._cols.items())

    def defaults(self) -> FieldBundle:
        return FieldBundle({k: np.zeros_like(v) for k, v in self._cols.items()}, self._length)

    def take(self, indices: Any) -> FieldBundle:
        idx = np.asarray(indices, dtype=np.int64)
        return FieldBundle({k: v[idx] for k, v in self._cols.items()}, len(idx))

    def where(self, mask: np.ndarray, other: FieldBundle) -> FieldBundle:
        """Per-slot choice: ``self`` where ``mask`` holds, else ``other``."""
        mask = np.asarray(mask, dtype=bool)
        out = {}
        for k, v in self._cols.items():
            m = mask.reshape(mask.shape + (1,) * (v.ndim - 1))
            out[k] = np.where(m, v, other[k])
        return FieldBundle(out, self._length)

    def updated(self, columns: Mapping[str, Any]) -> FieldBundle:
        """Copy with some columns replaced; kinds and shapes must be preserved."""
        out = dict(self._cols)
        for k, v in columns.items():
            if k not in self._cols:
                raise SchemaError(f"unknown field {k!r}; have {self.names}")
            old = self._cols[k]
            arr = np.asarray(v)
            if arr.shape != old.shape:
                raise SchemaError(f"field {k!r} shape {arr.shape} != {old.shape}")
            if _KIND_OF_DTYPE.get(arr.dtype.kind) is None or not np.can_cast(arr.dtype, old.dtype, "same_kind"):
                raise SchemaError(f"field {k!r} dtype {arr.dtype} incompatible with {old.dtype}")
            out[k] = arr.astype(old.dtype, copy=False)
        return FieldBundle(out, self._length)


def bundles_identical(a: FieldBundle, b: FieldBundle) -> bool:
    """Bitwise equality, including dtypes and field order."""
    if a.names != b.names or a.length != b.length:
        return False
    for k in a:
        x, y = a[k], b[k]
        if x.dtype != y.dtype or x.shape != y.shape or x.tobytes() != y.tobytes():
            return False
    return True


# -- schema declaration -----------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float | int | bool


@dataclass(frozen=True)
class Uniform:
    """Real draw in ``[low, high)``."""

    low: float
    high: float


@dataclass(frozen=True)
class UniformInt:
    """Integer draw in ``[low, high)``."""

    low: int
    high: int


Initializer = Union[Const, Uniform, UniformInt]


@dataclass(frozen=True)
class Field:
    name: str
    kind: str
    init: Initializer = Const(0)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SchemaError(f"field {self.name!r}: unknown kind {self.kind!r}")
        if isinstance(self.init, (Uniform, UniformInt)) and self.kind == "boolean":
            raise SchemaError(f"field {self.name!r}: random initializers need a numeric kind")


def _init_column(fld: Field, capacity: int, num_active: int, stream: RngState) -> np.ndarray:
    col = np.zeros(capacity, dtype=KINDS[fld.kind])
    init = fld.init
    if isinstance(init, Const):
        col[:num_active] = init.value
    elif isinstance(init, Uniform):
        col[:num_active] = stream.uniform(num_active, init.low, init.high)
    elif isinstance(init, UniformInt):
        col[:num_active] = stream.integers(init.low, init.high, num_active)
    else:
        raise SchemaError(f"field {fld.name!r}: unsupported initializer {init!r}")
    return col


def build_bundle(
    fields: Sequence[Field], capacity: int, num_active: int, seed: RngState, role: str
) -> FieldBundle:
    """Initialize declared fields; slot ``i`` of field ``f`` draws counter ``i``
    of stream ``seed.fold("create").fold(role).fold(f)``."""
    names = [f.name for f in fields]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise SchemaError(f"duplicate field names in {role}: {dupes}")
    base = seed.fold("create").fold(role)
    return FieldBundle(
        {f.name: _init_column(f, capacity, num_active, base.fold(f.name)) for f in fields},
        capacity,
    )


# -- agent sets ---------------------------------------------------------------

@dataclass(frozen=True)
class Slots:
    """Aligned read-only view of some slots, handed to user functions."""

    active: np.ndarray
    id: np.ndarray
    agent_type: np.ndarray
    age: np.ndarray
    state: FieldBundle
    params: FieldBundle
    policy_state: FieldBundle
    policy_params: FieldBundle

    def __len__(self) -> int:
        return len(self.active)


@dataclass(frozen=True, eq=False)
class AgentSet:
    capacity: int
    num_active: int
    active: np.ndarray
    id: np.ndarray
    agent_type: np.ndarray
    age: np.ndarray
    state: FieldBundle
    params: FieldBundle
    policy_state: FieldBundle = field(default_factory=FieldBundle)
    policy_params: FieldBundle = field(default_factory=FieldBundle)
    next_id: int = 0
    recycle_ids: bool = False

    def __post_init__(self) -> None:
        for name, dtype in (("active", np.bool_), ("id", np.int64), ("agent_type", np.int64), ("age", np.int64)):
            arr = np.array(getattr(self, name), dtype=dtype)
            if arr.shape != (self.capacity,):
                raise SchemaError(f"{name} has shape {arr.shape}, expected ({self.capacity},)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("state", "params", "policy_state", "policy_params"):
            bundle = getattr(self, name)
            if len(bundle) and bundle.length != self.capacity:
                raise SchemaError(f"{name} columns have length {bundle.length}, expected {self.capacity}")
            if not len(bundle):
                object.__setattr__(self, name, FieldBundle(length=self.capacity))
        if int(self.active.sum()) != self.num_active:
            raise SchemaError(f"num_active={self.num_active} but {int(self.active.sum())} active slots")

    def slots(self, indices: Any = None) -> Slots:
        if indices is None:
            return Slots(self.active, self.id, self.agent_type, self.age,
                         self.state, self.params, self.policy_state, self.policy_params)
        idx = np.asarray(indices, dtype=np.int64)
        return Slots(self.active[idx], self.id[idx], self.agent_type[idx], self.age[idx],
                     self.state.take(idx), self.params.take(idx),
                     self.policy_state.take(idx), self.policy_params.take(idx))

    def evolve(self, **changes: Any) -> AgentSet:
        return replace(self, **changes)

    def permuted(self, perm: np.ndarray) -> AgentSet:
        """All per-slot columns reordered by ``perm`` (new slot k = old slot perm[k])."""
        return replace(
            self,
            active=self.active[perm], id=self.id[perm], agent_type=self.agent_type[perm],
            age=self.age[perm], state=self.state.take(perm), params=self.params.take(perm),
            policy_state=self.policy_state.take(perm), policy_params=self.policy_params.take(perm),
        )

    def identical(self, other: AgentSet) -> bool:
        """Bitwise equality of every column and counter."""
        return (
            self.capacity == other.capacity
            and self.num_active == other.num_active
            and self.next_id == other.next_id
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("active", "id", "agent_type", "age")
            )
            and all(
                bundles_identical(getattr(self, k), getattr(other, k))
                for k in ("state", "params", "policy_state", "policy_params")
            )
        )

    def check_invariants(self) -> None:
        """Raise AssertionError if a structural invariant is broken."""
        assert int(self.active.sum()) == self.num_active, "popcount(active) != num_active"
        live = self.id[self.active]
        assert len(np.unique(live)) == len(live), "duplicate ids among active agents"
        assert (self.age >= 0).all(), "negative age"
        for name in ("state", "params", "policy_state", "policy_params"):
            assert getattr(self, name).length == self.capacity, f"{name} length != capacity"


def create_agents(
    capacity: int,
    num_active: int,
    state: Sequence[Field] = (),
    params: Sequence[Field] = (),
    seed: RngState | None = None,
    *,
    agent_type: int = 0,
    policy_state: Sequence[Field] = (),
    policy_params: Sequence[Field] = (),
    recycle_ids: bool = False,
) -> AgentSet:
    """Slots ``0..num_active-1`` become live agents with ids ``0..num_active-1``."""
    if capacity <= 0:
        raise CapacityError(f"capacity must be positive, got {capacity}")
    if not 0 <= num_active <= capacity:
        raise CapacityError(f"num_active={num_active} outside [0, {capacity}]")
    seed = seed if seed is not None else RngState(0)
    active = np.arange(capacity) < num_active
    ids = np.where(active, np.arange(capacity), PLACEHOLDER_ID)
    return AgentSet(
        capacity=capacity,
        num_active=num_active,
        active=active,
        id=ids,
        agent_type=np.where(active, agent_type, 0),
        age=np.zeros(capacity, dtype=np.int64),
        state=build_bundle(state, capacity, num_active, seed, "state"),
        params=build_bundle(params, capacity, num_active, seed, "params"),
        policy_state=build_bundle(policy_state, capacity, num_active, seed, "policy_state"),
        policy_params=build_bundle(policy_params, capacity, num_active, seed, "policy_params"),
        next_id=num_active,
        recycle_ids=recycle_ids,
    )


Transition = Callable[[Slots, Any], Mapping[str, Any]]


def merge_state(agents: AgentSet, produced: Mapping[str, Any], mask: np.ndarray) -> FieldBundle:
    """State bundle taking ``produced`` columns on ``mask`` slots, old values elsewhere."""
    if not isinstance(produced, Mapping):
        raise SchemaError(f"update function must return a mapping of state columns, got {type(produced).__name__}")
    candidate = agents.state.updated(produced)
    return candidate.where(mask, agents.state)


def step_agents(
    agents: AgentSet,
    transition: Transition,
    shared_input: Any = None,
    *,
    increment_age: bool = True,
) -> AgentSet:
    """Apply ``transition`` to every slot.

    ``transition`` is written against whole columns but must act per slot:
    output row ``i`` may depend only on input row ``i`` and ``shared_input``.
    Placeholder outputs are discarded.
    """
    produced = transition(agents.slots(), shared_input)
    state = merge_state(agents, produced, agents.active)
    age = agents.age + agents.active if increment_age else agents.age
    return replace(agents, state=state, age=age)


def remove_agents(agents: AgentSet, kill_mask: Any) -> AgentSet:
    kill = np.asarray(kill_mask, dtype=bool)
    if kill.shape != (agents.capacity,):
        raise SchemaError(f"kill_mask shape {kill.shape} != ({agents.capacity},)")
    kill = kill & agents.active
    if not kill.any():
        return agents
    keep = ~kill

    def reset(bundle: FieldBundle) -> FieldBundle:
        return bundle.where(keep, bundle.defaults())

    return replace(
        agents,
        num_active=agents.num_active - int(kill.sum()),
        active=agents.active & keep,
        id=np.where(keep, agents.id, PLACEHOLDER_ID),
        agent_type=np.where(keep, agents.agent_type, 0),
        age=np.where(keep, agents.age, 0),
        state=reset(agents.state),
        params=reset(agents.params),
        policy_state=reset(agents.policy_state),
        policy_params=reset(agents.policy_params),
    )
