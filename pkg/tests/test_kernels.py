import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abmx import (
    DomainError,
    FieldBundle,
    SchemaError,
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
from abmx.kernels import grouped_rank_match, grouped_ranks, rank_match

from conftest import make_set


def copy_value(slots, rows):
    return {"value": rows["value"]}


def toy_inputs(a, b):
    agents = make_set(a, name="value", kind="integer")
    mask = agents.state["value"] % 2 == 0
    b = np.array(b)
    updates = UpdateBatch(FieldBundle({"value": b}), b % 2 == 1)
    return agents, mask, updates


def stable_partition(mask):
    mask = list(mask)
    return [i for i, m in enumerate(mask) if m] + [i for i, m in enumerate(mask) if not m]


class TestRanks:
    @pytest.mark.parametrize(
        "mask, ranks",
        [
            ([False, False, False], [0, 0, 0]),
            ([True, False, True, True], [1, 0, 2, 3]),
            ([True, True, True], [1, 2, 3]),
            ([], []),
        ],
    )
    def test_examples(self, mask, ranks):
        assert compute_ranks(np.array(mask, bool)).tolist() == ranks

    @settings(max_examples=300)
    @given(st.lists(st.booleans(), max_size=80))
    def test_labels_are_one_to_popcount(self, mask):
        r = compute_ranks(np.array(mask, bool))
        assert r[r > 0].tolist() == list(range(1, sum(mask) + 1))
        assert ((r == 0) == ~np.array(mask, bool)).all()


class TestSelect:
    def test_none(self):
        a = make_set([1.0] * 5)
        res = select_agents(a, lambda s: np.zeros(5, bool))
        assert res.indices.tolist() == [0, 1, 2, 3, 4] and res.count == 0

    def test_stable(self):
        a = make_set([0, 1, 0, 1, 1], name="v", kind="integer")
        res = select_agents(a, lambda s: s.state["v"] == 1)
        assert res.indices.tolist() == stable_partition([0, 1, 0, 1, 1]) == [1, 3, 4, 0, 2]
        assert res.count == 3
        assert res.selected.tolist() == [1, 3, 4]

    def test_all(self):
        a = make_set([1.0] * 4)
        res = select_agents(a, lambda s: np.ones(4, bool))
        assert res.indices.tolist() == [0, 1, 2, 3] and res.count == 4

    def test_bad_predicate(self):
        with pytest.raises(SchemaError):
            select_agents(make_set([1.0, 2.0]), lambda s: np.ones(3, bool))

    @settings(max_examples=200)
    @given(st.lists(st.booleans(), min_size=1, max_size=64))
    def test_permutation_and_stability(self, mask):
        a = make_set([0.0] * len(mask))
        res = select_agents(a, lambda s: np.array(mask))
        assert sorted(res.indices.tolist()) == list(range(len(mask)))
        assert res.indices.tolist() == stable_partition(mask)


class TestSort:
    def _perm(self, key, direction="ascending"):
        a = make_set(list(range(len(key))), name="orig", kind="integer")
        return sort_agents(a, np.array(key, float), direction).state["orig"].tolist()

    def test_reference(self):
        assert self._perm([3, 1, 2]) == sorted(range(3), key=[3, 1, 2].__getitem__)

    def test_sorted_is_identity(self):
        assert self._perm([1, 2, 3, 4]) == [0, 1, 2, 3]

    def test_ties_keep_order(self):
        assert self._perm([2, 2, 1]) == [2, 0, 1]

    def test_descending(self):
        assert self._perm([1, 3, 3, 2], "descending") == [1, 2, 3, 0]

    def test_nonfinite_rejected_on_active(self):
        a = make_set([1.0, 2.0])
        with pytest.raises(DomainError):
            sort_agents(a, np.array([np.inf, 1.0]))
        with pytest.raises(DomainError):
            sort_agents(a, np.array([1.0, 2.0]), "sideways")

    def test_placeholder_pinning(self):
        a = make_set([5.0, 1.0, 3.0], active=[True, False, True])
        key = placeholder_key(a, a.state["energy"])
        out = sort_agents(a, key)
        assert out.active.tolist() == [True, True, False]
        assert out.state["energy"].tolist() == [3.0, 5.0, 0.0]
        key = placeholder_key(a, a.state["energy"], "descending")
        assert sort_agents(a, key, "descending").active.tolist() == [True, True, False]

    @settings(max_examples=150)
    @given(st.lists(st.integers(-5, 5), min_size=1, max_size=40), st.sampled_from(["ascending", "descending"]))
    def test_monotone_and_ids_preserved(self, key, direction):
        a = make_set([float(k) for k in key])
        out = sort_agents(a, a.state["energy"], direction)
        e = out.state["energy"]
        d = np.diff(e)
        assert (d >= 0).all() if direction == "ascending" else (d <= 0).all()
        assert sorted(out.id.tolist()) == sorted(a.id.tolist())
        # stability against Python's stable sort
        sign = 1 if direction == "ascending" else -1
        assert out.id.tolist() == sorted(range(len(key)), key=lambda i: sign * key[i])


class TestPaired:
    def test_toy(self):
        agents, mask, updates = toy_inputs([2, 3, 4, 6], [1, 4, 3])
        for kernel in (set_agents_rm, set_agents_sci, oracle_paired_update):
            assert kernel(agents, mask, updates, copy_value).state["value"].tolist() == [1, 3, 3, 6]

    def test_rm_methods_agree(self):
        agents, mask, updates = toy_inputs([2, 3, 4, 6], [1, 4, 3])
        dense = set_agents_rm(agents, mask, updates, copy_value, method="dense")
        lookup = set_agents_rm(agents, mask, updates, copy_value, method="lookup")
        assert dense.identical(lookup)

    def test_empty_valid(self):
        agents, mask, _ = toy_inputs([2, 3, 4, 6], [1])
        updates = UpdateBatch(FieldBundle({"value": [1, 3]}), np.zeros(2, bool))
        for kernel in (set_agents_rm, set_agents_sci, oracle_paired_update):
            assert kernel(agents, mask, updates, copy_value).identical(agents)

    def test_min_pq_contract(self):
        agents, mask, updates = toy_inputs([2, 3, 4, 6], [1, 4, 3])
        out = set_agents_rm(agents, mask, updates, copy_value)
        changed = (out.state["value"] != agents.state["value"]).sum()
        assert changed == min(mask.sum(), updates.valid.sum()) == 2

    def test_sci_order_dependent_body(self):
        agents = make_set([2, 4], name="value", kind="integer")
        updates = UpdateBatch(FieldBundle({"value": [1, 3]}), np.ones(2, bool))
        seen = []

        def body(current, k, slot, row):
            seen.append((k, slot, row))
            vals = np.array(current.state["value"])
            vals[slot] = updates.values["value"][row] + 10 * k
            return current.evolve(state=current.state.updated({"value": vals}))

        out = set_agents_sci(agents, np.ones(2, bool), updates, loop_body=body)
        assert seen == [(0, 0, 0), (1, 1, 1)]
        assert out.state["value"].tolist() == [1, 13]

    def test_sci_loop_sees_running_state(self):
        agents = make_set([0.0, 0.0, 0.0])
        updates = UpdateBatch(FieldBundle({"energy": [1.0, 2.0, 3.0]}), np.ones(3, bool))
        total = {"v": 0.0}

        def running(slots, rows):
            total["v"] += float(rows["energy"][0])
            return {"energy": np.array([total["v"]])}

        out = set_agents_sci(agents, np.ones(3, bool), updates, running)
        assert out.state["energy"].tolist() == [1.0, 3.0, 6.0]

    def test_sci_zero_iterations(self):
        agents, mask, _ = toy_inputs([1, 3], [1])
        updates = UpdateBatch(FieldBundle({"value": [1]}), np.ones(1, bool))
        calls = []
        out = set_agents_sci(agents, mask, updates, loop_body=lambda *a: calls.append(a))
        assert calls == [] and out is agents

    def test_oracle_q_greater_than_p(self):
        agents, mask, updates = toy_inputs([2, 3, 5], [1, 3, 5, 7])
        out = oracle_paired_update(agents, mask, updates, copy_value)
        assert out.state["value"].tolist() == [1, 3, 5]

    def test_schema_errors(self):
        agents, mask, updates = toy_inputs([2, 3], [1])
        with pytest.raises(SchemaError):
            set_agents_rm(agents, mask, updates, lambda s, r: {"nope": r["value"]})
        with pytest.raises(SchemaError):
            set_agents_rm(agents, mask[:1], updates, copy_value)
        with pytest.raises(SchemaError):
            UpdateBatch(FieldBundle({"value": [1, 2]}), np.ones(3, bool))
        with pytest.raises(SchemaError):
            set_agents_sci(agents, mask, updates)


class TestMask:
    def test_all_false(self):
        a = make_set([1.0, 2.0, 3.0])
        assert set_agents_mask(a, np.zeros(3, bool), lambda s: {"energy": s.state["energy"] + 10}).identical(a)

    def test_loop_oracle(self):
        a = make_set([1.0, 2.0, 3.0])
        mask = [True, False, True]
        out = set_agents_mask(a, np.array(mask), lambda s: {"energy": s.state["energy"] + 10})
        expected = [e + 10 if m else e for e, m in zip([1.0, 2.0, 3.0], mask)]
        assert out.state["energy"].tolist() == expected

    def test_identity_on_active(self):
        a = make_set([1.0, 2.0, 3.0], active=[True, False, True])
        assert set_agents_mask(a, a.active, lambda s: {}).identical(a)


def random_instance(r, cap_max=64, m_max=64):
    n = int(r.integers(1, cap_max + 1))
    m = int(r.integers(0, m_max + 1))
    agents = make_set(r.normal(size=n).tolist())
    if r.random() < 0.5:
        from abmx import remove_agents

        agents = remove_agents(agents, r.random(n) < r.random())
    target = r.random(n) < r.random()
    rows = FieldBundle({"energy": r.normal(size=m), "gain": r.normal(size=m)}, m)
    updates = UpdateBatch(rows, r.random(m) < r.random())
    return agents, target, updates


def affine(slots, rows):
    return {"energy": slots.state["energy"] * rows["gain"] + rows["energy"]}


def test_randomized_three_way_equivalence():
    r = np.random.default_rng(99)
    for _ in range(300):
        agents, target, updates = random_instance(r)
        ref = oracle_paired_update(agents, target, updates, affine)
        for out in (
            set_agents_rm(agents, target, updates, affine, method="dense"),
            set_agents_rm(agents, target, updates, affine, method="lookup"),
            set_agents_sci(agents, target, updates, affine),
        ):
            assert out.identical(ref)
        diff = (ref.state["energy"] != agents.state["energy"]).sum()
        assert diff <= min(target.sum(), updates.valid.sum())


class TestGrouped:
    def brute(self, mask, groups):
        seen = {}
        out = []
        for m, g in zip(mask, groups):
            if m:
                seen[g] = seen.get(g, 0) + 1
                out.append(seen[g])
            else:
                out.append(0)
        return out

    @settings(max_examples=200)
    @given(st.lists(st.tuples(st.booleans(), st.integers(0, 4)), max_size=40))
    def test_grouped_ranks(self, pairs):
        mask = [p[0] for p in pairs]
        groups = [p[1] for p in pairs]
        assert grouped_ranks(np.array(mask, bool), np.array(groups)).tolist() == self.brute(mask, groups)

    @settings(max_examples=200)
    @given(
        st.lists(st.tuples(st.booleans(), st.integers(0, 3)), max_size=30),
        st.lists(st.tuples(st.booleans(), st.integers(0, 3)), max_size=30),
    )
    def test_grouped_match(self, a, b):
        ma, ga = [p[0] for p in a], [p[1] for p in a]
        mb, gb = [p[0] for p in b], [p[1] for p in b]
        has, src = grouped_rank_match(np.array(ma, bool), np.array(ga, int), np.array(mb, bool), np.array(gb, int))
        ra, rb = self.brute(ma, ga), self.brute(mb, gb)
        for i in range(len(a)):
            partners = [j for j in range(len(b)) if rb[j] and rb[j] == ra[i] and gb[j] == ga[i]]
            assert has[i] == bool(partners)
            if partners:
                assert src[i] == partners[0]


def test_rank_match_no_updates():
    has, src = rank_match(np.array([True, False]), np.zeros(0, bool))
    assert has.tolist() == [False, False]


class TestAddAgents:
    def test_spawn_into_free_slots(self):
        a = make_set([1.0, 2.0, 3.0, 4.0], active=[True, False, True, False])
        rows = UpdateBatch(FieldBundle({"energy": [10.0, 20.0, 30.0]}), np.array([True, True, True]))
        for kernel in ("rm", "sci"):
            p = add_agents(a, rows, kernel=kernel, agent_type=2)
            assert p.agents.active.tolist() == [True] * 4
            assert p.agents.state["energy"].tolist() == [1.0, 10.0, 3.0, 20.0]
            assert p.slot_of_row.tolist() == [1, 3, -1]
            assert p.agents.agent_type.tolist() == [0, 2, 0, 2]
            assert p.agents.id.tolist() == [0, 4, 2, 5]
            p.agents.check_invariants()

    def test_recycled_ids(self):
        from abmx import Field, create_agents

        a = create_agents(3, 1, [Field("energy", "real")], recycle_ids=True)
        rows = UpdateBatch(FieldBundle({"energy": [1.0]}), np.array([True]))
        assert add_agents(a, rows).agents.id.tolist() == [0, 1, -1]
