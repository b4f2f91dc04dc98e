from __future__ import annotations

import numpy as np
import pytest

from abmx import Field, FieldBundle, create_agents

MASK64 = (1 << 64) - 1


def py_fmix(z: int) -> int:
    """SplitMix64 finalizer on Python ints, written independently of abmx.rng."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def py_draw(key: int, counter: int) -> int:
    return py_fmix((key + (counter + 1) * 0x9E3779B97F4A7C15) & MASK64)


def py_unit(key: int, counter: int) -> float:
    return (py_draw(key, counter) >> 11) * 2.0**-53


def make_set(values, active=None, name="energy", kind="real"):
    """Agent set whose single state column holds ``values``."""
    values = list(values)
    n = len(values)
    agents = create_agents(n, n, [Field(name, kind)])
    agents = agents.evolve(state=agents.state.updated({name: np.array(values)}))
    if active is not None:
        from abmx import remove_agents

        agents = remove_agents(agents, ~np.asarray(active, dtype=bool))
        # restore the requested payload on live slots only
        vals = np.where(np.asarray(active, dtype=bool), np.array(values), 0)
        agents = agents.evolve(state=agents.state.updated({name: vals.astype(agents.state[name].dtype)}))
    return agents


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def bundle():
    return FieldBundle({"x": [1, 2, 3], "e": [0.5, 1.5, 2.5]})


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
