"""Fixed-capacity, data-parallel agent-based modeling on NumPy."""

from .core import (
    AgentSet,
    CapacityError,
    Const,
    DomainError,
    Field,
    FieldBundle,
    SchemaError,
    Slots,
    Uniform,
    UniformInt,
    create_agents,
    remove_agents,
    step_agents,
)
from .kernels import (
    Placement,
    SelectionResult,
    UpdateBatch,
    add_agents,
    compute_ranks,
    oracle_paired_update,
    placeholder_key,
    select_agents,
    set_agents_mask,
    set_agents_rm,
    set_agents_sci,
    sort_agents,
)
from .rng import RngState

__version__ = "0.1.0"

__all__ = [
    "AgentSet",
    "CapacityError",
    "Const",
    "DomainError",
    "Field",
    "FieldBundle",
    "Placement",
    "RngState",
    "SchemaError",
    "SelectionResult",
    "Slots",
    "Uniform",
    "UniformInt",
    "UpdateBatch",
    "add_agents",
    "compute_ranks",
    "create_agents",
    "oracle_paired_update",
    "placeholder_key",
    "remove_agents",
    "select_agents",
    "set_agents_mask",
    "set_agents_rm",
    "set_agents_sci",
    "sort_agents",
    "step_agents",
]
