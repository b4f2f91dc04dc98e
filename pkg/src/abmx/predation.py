"""Grass-sheep-wolf predation on a toroidal lattice.

Phases per step, in order: move, eat (grass then sheep), metabolize, starve,
reproduce, regrow.  Offspring land on their parent's cell and are written
into free slots with the paired-update kernels, so births of a runtime-sized
subset never change array shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import AgentSet, Field, FieldBundle, UniformInt, create_agents, remove_agents, step_agents
from .kernels import UpdateBatch, add_agents, grouped_rank_match, grouped_ranks, set_agents_mask
from .rng import RngState

SHEEP, WOLF = 0, 1

# 8-neighbourhood, clockwise from north
_DX = np.array([0, 1, 1, 1, 0, -1, -1, -1], dtype=np.int64)
_DY = np.array([-1, -1, 0, 1, 1, 1, 0, -1], dtype=np.int64)


@dataclass(frozen=True)
class PredationConfig:
    width: int = 100
    height: int = 100
    n_sheep0: int = 600
    n_wolves0: int = 400
    sheep_capacity: int = 20000
    wolf_capacity: int = 20000
    energy_gain_sheep: float = 4.0
    energy_gain_wolf: float = 20.0
    metabolism: float = 1.0
    reproduce_prob_sheep: float = 0.04
    reproduce_prob_wolf: float = 0.05
    reproduce_energy_frac: float = 0.5
    regrow_delay: int = 30
    initial_grass_frac: float = 0.5
    kernel: str = "rm"

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("lattice dimensions must be positive")
        if self.n_sheep0 > self.sheep_capacity or self.n_wolves0 > self.wolf_capacity:
            raise ValueError("initial population exceeds capacity")
        for name in ("reproduce_prob_sheep", "reproduce_prob_wolf", "reproduce_energy_frac", "initial_grass_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.regrow_delay < 0:
            raise ValueError("regrow_delay must be non-negative")
        if self.kernel not in ("rm", "sci"):
            raise ValueError(f"kernel must be 'rm' or 'sci', got {self.kernel!r}")


@dataclass(frozen=True)
class World:
    width: int
    height: int
    regrow_counter: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.regrow_counter, dtype=np.int64)
        if c.shape != (self.width * self.height,) or (c < 0).any():
            raise ValueError("regrow_counter must be a non-negative column of width*height cells")
        c.setflags(write=False)
        object.__setattr__(self, "regrow_counter", c)

    @property
    def grass_ready(self) -> np.ndarray:
        return self.regrow_counter == 0

    def cell_of(self, agents: AgentSet) -> np.ndarray:
        return agents.state["y"] * self.width + agents.state["x"]


@dataclass(frozen=True)
class StepEvents:
    """What happened in one step, kept for bookkeeping checks and metrics."""

    grass_eaten: int = 0
    sheep_eaten_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    sheep_starved_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    wolves_starved_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    wolves_fed: int = 0
    sheep_eaten_energy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sheep_starved_energy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    wolves_starved_energy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sheep_births: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    wolf_births: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    births_dropped: int = 0

    @property
    def sheep_born(self) -> int:
        return len(self.sheep_births)

    @property
    def wolves_born(self) -> int:
        return len(self.wolf_births)


@dataclass(frozen=True)
class PredationState:
    world: World
    sheep: AgentSet
    wolves: AgentSet
    events: StepEvents = field(default_factory=StepEvents)
    step: int = 0


def _animal_fields(cfg: PredationConfig, gain: float) -> list[Field]:
    return [
        Field("x", "integer", UniformInt(0, cfg.width)),
        Field("y", "integer", UniformInt(0, cfg.height)),
        Field("energy", "real", UniformInt(1, int(2 * gain) + 1)),
    ]


def init_predation(cfg: PredationConfig, seed: RngState) -> PredationState:
    sheep = create_agents(cfg.sheep_capacity, cfg.n_sheep0, _animal_fields(cfg, cfg.energy_gain_sheep),
                          seed=seed.fold("sheep"), agent_type=SHEEP)
    wolves = create_agents(cfg.wolf_capacity, cfg.n_wolves0, _animal_fields(cfg, cfg.energy_gain_wolf),
                           seed=seed.fold("wolves"), agent_type=WOLF)
    n_cells = cfg.width * cfg.height
    grass = seed.fold("grass")
    ready = grass.fold("ready").uniform(n_cells) < cfg.initial_grass_frac
    counter = grass.fold("counter").integers(1, cfg.regrow_delay + 1, n_cells) if cfg.regrow_delay else np.zeros(n_cells, np.int64)
    world = World(cfg.width, cfg.height, np.where(ready, 0, counter))
    return PredationState(world, sheep, wolves)


def _move(agents: AgentSet, world: World, stream: RngState) -> AgentSet:
    direction = stream.integers(0, 8, agents.capacity)

    def walk(slots, d):
        return {
            "x": (slots.state["x"] + _DX[d]) % world.width,
            "y": (slots.state["y"] + _DY[d]) % world.height,
        }

    return step_agents(agents, walk, direction)


def _add_energy(agents: AgentSet, mask: np.ndarray, amount: float) -> AgentSet:
    return set_agents_mask(agents, mask, lambda s: {"energy": s.state["energy"] + amount})


def _reproduce(
    agents: AgentSet, prob: float, cfg: PredationConfig, stream: RngState, agent_type: int
) -> tuple[AgentSet, np.ndarray, int]:
    """Returns (agents, (parent id, child id) pairs, births dropped for lack of slots)."""
    energy = agents.state["energy"]
    ready = agents.active & (energy > cfg.metabolism) & (stream.uniform(agents.capacity) < prob)
    if not ready.any():
        return agents, np.zeros((0, 2), np.int64), 0
    child_energy = energy * cfg.reproduce_energy_frac
    rows = FieldBundle({"x": agents.state["x"], "y": agents.state["y"], "energy": child_energy})
    placement = add_agents(agents, UpdateBatch(rows, ready), agent_type=agent_type, kernel=cfg.kernel)
    # only parents whose offspring found a slot pay for it
    parents = placement.placed
    out = set_agents_mask(placement.agents, parents, lambda s: {"energy": s.state["energy"] - child_energy})
    children = placement.slot_of_row[parents]
    pairs = np.stack([out.id[parents], out.id[children]], axis=1)
    return out, pairs, int(ready.sum()) - placement.num_placed


def step_predation(state: PredationState, cfg: PredationConfig, rng: RngState) -> PredationState:
    """Advance one step.  Randomness comes from ``rng.fold("predation").split(step)``."""
    t = state.step
    base = rng.fold("predation").split(t)
    world, sheep, wolves = state.world, state.sheep, state.wolves

    sheep = _move(sheep, world, base.fold("move-sheep"))
    wolves = _move(wolves, world, base.fold("move-wolves"))

    # grass: lowest slot index on a ready cell eats
    sheep_cells = world.cell_of(sheep)
    hungry = sheep.active & world.grass_ready[sheep_cells]
    eaters = grouped_ranks(hungry, sheep_cells) == 1
    counter = np.array(world.regrow_counter)
    counter[sheep_cells[eaters]] = cfg.regrow_delay
    sheep = _add_energy(sheep, eaters, cfg.energy_gain_sheep)

    # predation: k-th wolf on a cell takes the k-th sheep on that cell
    fed, prey_slot = grouped_rank_match(wolves.active, world.cell_of(wolves), sheep.active, sheep_cells)
    eaten = np.zeros(sheep.capacity, dtype=bool)
    eaten[prey_slot[fed]] = True
    eaten_ids, eaten_energy = sheep.id[eaten], sheep.state["energy"][eaten]
    sheep = remove_agents(sheep, eaten)
    wolves = _add_energy(wolves, fed, cfg.energy_gain_wolf)

    sheep = _add_energy(sheep, sheep.active, -cfg.metabolism)
    wolves = _add_energy(wolves, wolves.active, -cfg.metabolism)

    starving_sheep = sheep.active & (sheep.state["energy"] <= 0)
    starving_wolves = wolves.active & (wolves.state["energy"] <= 0)
    starved_sheep_ids, starved_wolf_ids = sheep.id[starving_sheep], wolves.id[starving_wolves]
    starved_sheep_energy = sheep.state["energy"][starving_sheep]
    starved_wolf_energy = wolves.state["energy"][starving_wolves]
    sheep = remove_agents(sheep, starving_sheep)
    wolves = remove_agents(wolves, starving_wolves)

    sheep, sheep_born, sheep_dropped = _reproduce(sheep, cfg.reproduce_prob_sheep, cfg, base.fold("breed-sheep"), SHEEP)
    wolves, wolves_born, wolves_dropped = _reproduce(wolves, cfg.reproduce_prob_wolf, cfg, base.fold("breed-wolves"), WOLF)

    counter = np.maximum(counter - 1, 0) if cfg.regrow_delay else counter
    events = StepEvents(
        grass_eaten=int(eaters.sum()),
        sheep_eaten_ids=eaten_ids,
        sheep_starved_ids=starved_sheep_ids,
        wolves_starved_ids=starved_wolf_ids,
        wolves_fed=int(fed.sum()),
        sheep_eaten_energy=eaten_energy,
        sheep_starved_energy=starved_sheep_energy,
        wolves_starved_energy=starved_wolf_energy,
        sheep_births=sheep_born,
        wolf_births=wolves_born,
        births_dropped=sheep_dropped + wolves_dropped,
    )
    return PredationState(replace(world, regrow_counter=counter), sheep, wolves, events, t + 1)


def metrics_predation(state: PredationState) -> dict[str, float]:
    return {
        "n_sheep": state.sheep.num_active,
        "n_wolves": state.wolves.num_active,
        "n_grass": int(state.world.grass_ready.sum()),
        "births_dropped": state.events.births_dropped,
    }
