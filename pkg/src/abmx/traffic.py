"""Three-lane cellular-automaton road with signal-controlled exits.

Cells are numbered ``lane * length + cell``.  Cars enter at column 0, move one
column per step (optionally shifting one lane), and leave past the last
column while the exit signal is green.  Same-cell conflicts are settled by a
fixed priority over incoming directions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import AgentSet, Field, FieldBundle, create_agents, remove_agents
from .kernels import UpdateBatch, add_agents, set_agents_mask
from .rng import RngState

LANES = 3
EMPTY = -1

# proposal kinds; the first three double as conflict priorities (lower wins)
FORWARD, FROM_LEFT, FROM_RIGHT, STAY, EXIT = 0, 1, 2, 3, 4
_LANE_SHIFT = {FORWARD: 0, FROM_LEFT: 1, FROM_RIGHT: -1}


class ContractViolation(RuntimeError):
    """A proposal points at a cell that does not exist."""


@dataclass(frozen=True)
class SignalSchedule:
    """Square wave: green for the first ``green_fraction`` of every period."""

    period: int = 10
    green_fraction: float = 0.5
    phase: int = 0

    def __post_init__(self) -> None:
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if not 0.0 <= self.green_fraction <= 1.0:
            raise ValueError("green_fraction must lie in [0, 1]")

    @classmethod
    def seeded(cls, seed: RngState, period: int = 10, green_fraction: float = 0.5) -> SignalSchedule:
        phase = int(seed.fold("signal-phase").integers(0, period, 1)[0])
        return cls(period, green_fraction, phase)

    def green(self, t: int) -> bool:
        return ((t + self.phase) % self.period) < self.green_fraction * self.period


@dataclass(frozen=True)
class TrafficConfig:
    length: int = 100
    period: int = 10
    green_fraction: float = 0.5
    max_spawn: int = LANES

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ValueError("road length must be >= 1")
        if not 0 <= self.max_spawn <= LANES:
            raise ValueError(f"max_spawn must lie in [0, {LANES}]")


@dataclass(frozen=True)
class Road:
    length: int
    occupancy: np.ndarray
    signal_green: bool
    cars: AgentSet
    spawned: int = 0
    exited: int = 0
    spawned_total: int = 0
    exited_total: int = 0

    def __post_init__(self) -> None:
        occ = np.array(self.occupancy, dtype=np.int64)
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)

    @property
    def lanes(self) -> int:
        return LANES

    def cell_index(self, lane: np.ndarray, cell: np.ndarray) -> np.ndarray:
        return lane * self.length + cell

    def check_invariants(self) -> None:
        cars = self.cars
        assert self.occupancy.shape == (LANES * self.length,)
        live = np.flatnonzero(cars.active)
        cells = self.cell_index(cars.state["lane"][live], cars.state["cell"][live])
        assert len(np.unique(cells)) == len(cells), "two cars share a cell"
        expected = np.full(LANES * self.length, EMPTY, dtype=np.int64)
        expected[cells] = live
        assert np.array_equal(expected, self.occupancy), "occupancy out of sync with cars"
        assert self.spawned_total - self.exited_total == cars.num_active, "spawn/exit ledger broken"


def occupancy_of(cars: AgentSet, length: int) -> np.ndarray:
    occ = np.full(LANES * length, EMPTY, dtype=np.int64)
    live = np.flatnonzero(cars.active)
    occ[cars.state["lane"][live] * length + cars.state["cell"][live]] = live
    return occ


def empty_road(length: int) -> Road:
    cars = create_agents(LANES * length, 0, [Field("lane", "integer"), Field("cell", "integer")])
    return Road(length, np.full(LANES * length, EMPTY, dtype=np.int64), False, cars)


@dataclass(frozen=True)
class Proposals:
    """Per car slot: what it wants and where that leads (-1 for stay/exit/none)."""

    kind: np.ndarray
    target: np.ndarray


def propose_moves(road: Road, stream: RngState) -> Proposals:
    """Each car picks uniformly among the forward cells that exist.

    Slot ``i`` uses counter ``i`` of ``stream``.  Cars in the last column ask
    to exit while the signal is green and stay otherwise.
    """
    cars = road.cars
    lane, cell = cars.state["lane"], cars.state["cell"]
    n_opts = 1 + (lane > 0) + (lane < LANES - 1)
    pick = np.minimum(np.floor(stream.uniform(cars.capacity) * n_opts).astype(np.int64), n_opts - 1)
    # option order: forward, lane-1, lane+1 (skipping the missing one)
    shift = np.where(pick == 0, 0, np.where((pick == 1) & (lane > 0), -1, 1))
    at_exit = cell == road.length - 1
    kind = np.select(
        [~cars.active, at_exit & road.signal_green, at_exit, shift == 0, shift == 1],
        [STAY, EXIT, STAY, FORWARD, FROM_LEFT],
        FROM_RIGHT,
    )
    moving = (kind == FORWARD) | (kind == FROM_LEFT) | (kind == FROM_RIGHT)
    target = np.where(moving, road.cell_index(lane + shift, cell + 1), EMPTY)
    return Proposals(kind.astype(np.int64), target.astype(np.int64))


def resolve_conflicts(road: Road, proposals: Proposals) -> np.ndarray:
    """Which proposals go ahead; no randomness involved.

    A cell takes its highest-priority proposer (straight ahead, then from the
    left lane, then from the right lane) and only once its current occupant
    has been accepted out.  Acceptance grows monotonically from "nobody
    moves", so iterating to a fixed point settles chains of followers in at
    most ``length`` rounds.
    """
    cars = road.cars
    n_cells = LANES * road.length
    moving = proposals.target >= 0
    if ((proposals.target >= n_cells) | ((proposals.target < 0) & (proposals.target != EMPTY))).any():
        raise ContractViolation("proposal targets a cell outside the road")
    if (moving & ~cars.active).any():
        raise ContractViolation("placeholder slot proposed a move")
    exits = cars.active & (proposals.kind == EXIT)

    # winner per target cell: lowest (priority, slot)
    best = np.full(n_cells, np.iinfo(np.int64).max, dtype=np.int64)
    prio_key = proposals.kind * cars.capacity + np.arange(cars.capacity)
    np.minimum.at(best, proposals.target[moving], prio_key[moving])
    winner = np.zeros(cars.capacity, dtype=bool)
    winner[moving] = best[proposals.target[moving]] == prio_key[moving]

    accepted = exits.copy()
    occ = road.occupancy
    for _ in range(road.length + 1):
        occupant = occ[np.where(moving, proposals.target, 0)]
        cell_free = (occupant == EMPTY) | accepted[np.maximum(occupant, 0)]
        new = exits | (winner & cell_free)
        if np.array_equal(new, accepted):
            break
        accepted = new
    return accepted


def spawn_cars(road: Road, stream: RngState, max_spawn: int = LANES) -> Road:
    """Draw k uniform in 0..max_spawn, choose k distinct entry lanes, fill the empty ones."""
    k = int(stream.fold("count").integers(0, max_spawn + 1, 1)[0])
    chosen = np.zeros(LANES, dtype=bool)
    chosen[stream.fold("lanes").permutation(LANES)[:k]] = True
    entry_free = road.occupancy[np.arange(LANES) * road.length] == EMPTY
    rows = FieldBundle({"lane": np.arange(LANES), "cell": np.zeros(LANES, dtype=np.int64)})
    placement = add_agents(road.cars, UpdateBatch(rows, chosen & entry_free))
    cars = placement.agents
    return replace(
        road,
        cars=cars,
        occupancy=occupancy_of(cars, road.length),
        spawned=road.spawned + placement.num_placed,
        spawned_total=road.spawned_total + placement.num_placed,
    )


def step_road(road: Road, schedule: SignalSchedule, rng: RngState, t: int, max_spawn: int = LANES) -> Road:
    """Signal, propose, resolve, move, exit, spawn.  Streams: ``rng.fold("traffic").split(t)``."""
    base = rng.fold("traffic").split(t)
    road = replace(road, signal_green=schedule.green(t), spawned=0, exited=0)
    proposals = propose_moves(road, base.fold("propose"))
    accepted = resolve_conflicts(road, proposals)

    move = accepted & (proposals.target >= 0)
    shift = np.array([_LANE_SHIFT.get(k, 0) for k in range(EXIT + 1)])[proposals.kind]
    cars = set_agents_mask(road.cars, move, lambda s: {
        "lane": s.state["lane"] + shift,
        "cell": s.state["cell"] + 1,
    })
    leaving = accepted & (proposals.kind == EXIT)
    cars = remove_agents(cars, leaving)
    n_exit = int(leaving.sum())
    road = replace(
        road,
        cars=cars,
        occupancy=occupancy_of(cars, road.length),
        exited=n_exit,
        exited_total=road.exited_total + n_exit,
    )
    return spawn_cars(road, base.fold("spawn"), max_spawn)


@dataclass(frozen=True)
class TrafficState:
    road: Road
    schedule: SignalSchedule
    step: int = 0


def init_traffic(cfg: TrafficConfig, seed: RngState) -> TrafficState:
    return TrafficState(empty_road(cfg.length), SignalSchedule.seeded(seed, cfg.period, cfg.green_fraction))


def advance_traffic(state: TrafficState, cfg: TrafficConfig, rng: RngState) -> TrafficState:
    road = step_road(state.road, state.schedule, rng, state.step, cfg.max_spawn)
    return TrafficState(road, state.schedule, state.step + 1)


def metrics_traffic(state: TrafficState) -> dict[str, float]:
    road = state.road
    return {
        "n_cars": road.cars.num_active,
        "spawned": road.spawned,
        "exited": road.exited,
        "signal_green": int(road.signal_green),
    }
