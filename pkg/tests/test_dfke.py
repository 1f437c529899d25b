import itertools

import pytest

from lipi_sim.dfke import (
    RefreshPolicy,
    dfke_round,
    draw_secret,
    fold_key,
    key_refresh_due,
    public_value,
    shared_value,
)
from lipi_sim.errors import DomainError
from lipi_sim.modmath import ModParams
from lipi_sim.stnet import FailureEvent, FailurePhase, SimConfig, Topology, complete, line, random_geometric


def slow_pow(b, e, m):
    acc = 1
    for _ in range(e):
        acc = acc * b % m
    return acc


class TestDhAlgebra:
    def test_small_example(self):
        mp = ModParams(23, 5)
        v1, v2 = public_value(6, mp), public_value(15, mp)
        assert (v1, v2) == (slow_pow(5, 6, 23), slow_pow(5, 15, 23)) == (8, 19)
        assert shared_value(v2, 6, mp) == shared_value(v1, 15, mp) == slow_pow(5, 90, 23) == 2

    def test_secret_range(self):
        mp = ModParams(23, 5)
        draws = {draw_secret(v, mp, seed) for v in range(1, 30) for seed in range(30)}
        assert min(draws) >= 2 and max(draws) <= 21
        assert draws == set(range(2, 22))

    def test_fold_is_64_bit_and_deterministic(self):
        assert fold_key(12345) == fold_key(12345)
        assert fold_key(12345) != fold_key(12346)
        assert 0 <= fold_key(2**200) < 2**64


class TestDfkeRound:
    def test_two_nodes_symmetric(self):
        res = dfke_round(line(2), SimConfig(ntx=1), ModParams(23, 5), rng_seed=3)
        t1, t2 = res.tables[1], res.tables[2]
        assert t1.raw[2] == t2.raw[1]
        assert t1.key(2) == t2.key(1)

    def test_small_params_match_oracle(self):
        mp = ModParams(23, 5)
        res = dfke_round(complete(4), SimConfig(ntx=1), mp, rng_seed=9)
        for i, j in itertools.permutations(range(1, 5), 2):
            ti, tj = res.tables[i], res.tables[j]
            assert ti.public == slow_pow(5, ti.secret, 23)
            assert ti.raw[j] == slow_pow(tj.public, ti.secret, 23)
            assert ti.raw[j] == slow_pow(5, ti.secret * tj.secret, 23)

    def test_failed_before_setup_is_absent(self):
        cfg = SimConfig(ntx=2, failure_plan=[FailureEvent(3, FailurePhase.BEFORE_DFKE)])
        res = dfke_round(complete(5), cfg, rng_seed=1)
        assert 3 not in res.tables
        assert all(3 not in t.pairwise for t in res.tables.values())
        assert set(res.tables) == {1, 2, 4, 5}

    def test_unreached_node_excluded(self):
        t = Topology(4, {frozenset((1, 2)): 1.0, frozenset((2, 3)): 1.0})
        res = dfke_round(t, SimConfig(ntx=3), rng_seed=1)
        assert res.excluded == {4}
        assert set(res.tables) == {1, 2, 3}

    def test_phases_and_metrics(self):
        t = line(4)
        res = dfke_round(t, SimConfig(ntx=3), rng_seed=2)
        assert [p.name for p in res.timeline.phases] == ["DFKE_FLOOD", "DFKE_SHARE"]
        assert res.timeline.now == 3 + 3 * 6
        assert all(res.timeline.radio_on[v] <= res.timeline.now for v in t.nodes)

    def test_trace_carries_only_public_values(self):
        res = dfke_round(complete(6), SimConfig(ntx=1), rng_seed=4)
        sent = set(res.trace.all_payload_ints())
        for tab in res.tables.values():
            assert tab.secret not in sent
            assert tab.public in sent

    def test_symmetry_over_seeds(self):
        mismatches = 0
        for seed in range(20):
            topo = random_geometric(15, 250, seed=seed)
            res = dfke_round(topo, SimConfig(ntx=2 * topo.diameter()), rng_seed=seed)
            for i, j in itertools.combinations(topo.nodes, 2):
                mismatches += res.tables[i].key(j) != res.tables[j].key(i)
        assert mismatches == 0

    def test_no_key_collisions(self):
        res = dfke_round(complete(46), SimConfig(ntx=1), rng_seed=5)
        keys = [res.tables[i].key(j) for i, j in itertools.combinations(range(1, 47), 2)]
        assert len(keys) >= 1000
        assert len(set(keys)) == len(keys)
        assert res.params.p >= 2**31 - 1

    def test_deterministic(self):
        a = dfke_round(complete(5), SimConfig(ntx=1), rng_seed=6)
        b = dfke_round(complete(5), SimConfig(ntx=1), rng_seed=6)
        assert {v: t.pairwise for v, t in a.tables.items()} == {v: t.pairwise for v, t in b.tables.items()}

    def test_no_alive_nodes(self):
        cfg = SimConfig(failure_plan=[FailureEvent(1, FailurePhase.BEFORE_DFKE)])
        with pytest.raises(DomainError):
            dfke_round(line(2), cfg, participants=[1])


class TestRefresh:
    def test_examples(self):
        policy = RefreshPolicy(threshold=100)
        assert not key_refresh_due(0, policy)
        assert key_refresh_due(100, policy)
        assert key_refresh_due(0, policy, membership_changed=True)

    def test_membership_flag_can_be_ignored(self):
        policy = RefreshPolicy(threshold=5, on_membership_change=False)
        assert not key_refresh_due(1, policy, membership_changed=True)

    def test_bad_threshold(self):
        with pytest.raises(DomainError):
            RefreshPolicy(threshold=0)
