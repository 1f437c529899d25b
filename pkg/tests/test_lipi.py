import random

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from lipi_sim.aggspec import AggregationSpec, plain_aggregate
from lipi_sim.dfke import RefreshPolicy, dfke_round
from lipi_sim.errors import DomainError
from lipi_sim.lipi import detect_missing, events_for_round, lipi_round, run_periodic, setup_config
from lipi_sim.stnet import FailureEvent, FailurePhase, SimConfig, complete, line, random_geometric, ring
from lipi_sim.trace import LEGAL_PATHS, RoundPhase, RoundStatus

SUM = AggregationSpec.parse("sum")
SILENT = FailurePhase.AFTER_DFKE_SILENT


def run(topo, cfg, secrets=None, spec=SUM, seed=0, seq_no=0):
    keys = dfke_round(topo, setup_config(cfg), rng_seed=seed).tables
    if secrets is None:
        secrets = {v: v for v in topo.nodes}
    return lipi_round(topo, cfg, spec, secrets, keys, seq_no=seq_no)


def silent(*nodes, ntx=2):
    return SimConfig(ntx=ntx, failure_plan=[FailureEvent(v, SILENT) for v in nodes])


class TestRound:
    def test_sum_of_ids_24(self):
        res = run(complete(24), SimConfig(ntx=2))
        assert res.status is RoundStatus.OK
        assert set(res.aggregate.values()) == {300}
        assert not res.recovery_used
        assert res.survivors == frozenset(range(1, 25))

    def test_sum_of_ids_31(self):
        topo = random_geometric(31, 300, seed=4)
        res = run(topo, SimConfig(ntx=2 * topo.diameter()))
        assert set(res.aggregate.values()) == {496}
        assert res.comm_rounds == 1

    def test_three_nodes_one_silent(self):
        res = run(complete(3), silent(3), secrets={1: 40, 2: 2, 3: 1000})
        assert res.recovery_used
        assert res.aggregate == {1: 42, 2: 42}
        assert res.included == frozenset({1, 2})
        assert res.comm_rounds == 2

    def test_mid_share_value_survives(self):
        cfg = SimConfig(ntx=2, failure_plan=[FailureEvent(3, FailurePhase.MID_SHARE, 1)])
        res = run(complete(3), cfg)
        assert not res.recovery_used
        assert res.survivors == frozenset({1, 2})
        assert res.value == 6

    def test_initiator_failure(self):
        res = run(line(4), silent(1, ntx=6))
        assert res.status is RoundStatus.INITIATOR_FAILED
        assert res.aggregate == {}

    def test_failure_during_recovery(self):
        # node 2 relays its first share then dies, so it cannot re-mask once 3 is declared missing
        cfg = SimConfig(ntx=2, failure_plan=[FailureEvent(3, SILENT), FailureEvent(2, FailurePhase.MID_SHARE, 1)])
        res = run(complete(5), cfg)
        assert res.status is RoundStatus.RECOVERY_FAILED
        assert res.recovery_used

    def test_mid_share_in_recovery_with_relay(self):
        cfg = SimConfig(ntx=2, failure_plan=[FailureEvent(3, SILENT), FailureEvent(2, FailurePhase.MID_SHARE, 2)])
        res = run(complete(5), cfg)
        assert res.status is RoundStatus.OK
        assert set(res.aggregate) == {1, 4, 5}
        assert res.value == 1 + 2 + 4 + 5

    def test_mean_and_geometric_under_failure(self):
        secrets = {1: 2, 2: 8, 3: 5, 4: 4}
        am = run(complete(4), silent(3), secrets=secrets, spec=AggregationSpec.parse("am"))
        assert am.value.value == pytest.approx(14 / 3)
        gm = run(complete(4), silent(3), secrets=secrets, spec=AggregationSpec.parse("gm"))
        assert gm.value.value == pytest.approx(64 ** (1 / 3))

    def test_needs_keys(self):
        with pytest.raises(DomainError):
            lipi_round(complete(3), SimConfig(), SUM, {1: 1, 2: 2, 3: 3}, {})

    def test_latency_sums_phases(self):
        res = run(complete(6), silent(4))
        end = res.phases[-1].end
        assert all(t == end for t in res.latency.values())
        assert [p.name for p in res.phases] == [p.value for p in res.path[:-1]]


class TestDetectMissing:
    def test_complete(self):
        assert detect_missing({1: 0, 2: 0, 3: 0}, [1, 2, 3]) == set()

    def test_one_silent(self):
        assert detect_missing({1: 0, 2: 0}, [1, 2, 3]) == {3}

    def test_relayed_mid_share_entry(self):
        cfg = SimConfig(ntx=2, failure_plan=[FailureEvent(4, FailurePhase.MID_SHARE, 1)])
        res = run(complete(4), cfg)
        got = res.trace.observed[RoundPhase.SHARE_1.value][1]
        assert detect_missing(dict.fromkeys(got), [1, 2, 3, 4]) == set()


failure_plans = st.lists(
    st.tuples(st.integers(2, 7), st.sampled_from(list(FailurePhase)), st.integers(1, 4)),
    max_size=6, unique_by=lambda t: t[0])


class TestProperties:
    @settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(failure_plans, st.integers(0, 2**16))
    def test_correct_and_agreeing(self, plan, seed):
        topo = complete(8)
        cfg = SimConfig(ntx=2, rng_seed=seed, failure_plan=[FailureEvent(v, ph, k) for v, ph, k in plan])
        rng = random.Random(seed)
        secrets = {v: rng.randrange(1000) for v in topo.nodes}
        res = run(topo, cfg, secrets=secrets, seed=seed)
        assert tuple(res.path) in LEGAL_PATHS
        mid = {v for v, ph, _ in plan if ph is FailurePhase.MID_SHARE}
        gone = {v for v, ph, _ in plan if ph is not FailurePhase.MID_SHARE}
        if res.status is RoundStatus.RECOVERY_FAILED:
            assert mid and gone
            return
        assert res.status is RoundStatus.OK
        assert len(set(res.aggregate.values())) == 1
        assert set(res.aggregate) == res.survivors
        # a MID_SHARE budget larger than what the node ever sends leaves it alive
        assert set(topo.nodes) - mid - gone <= res.survivors <= set(topo.nodes) - gone
        assert res.value == plain_aggregate(SUM, [secrets[v] for v in res.included])
        assert res.recovery_used == bool(gone - {v for v, ph, _ in plan if ph is FailurePhase.BEFORE_DFKE})

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32))
    def test_trace_hygiene(self, seed):
        topo = complete(7)
        rng = random.Random(seed)
        secrets = {v: rng.getrandbits(64) for v in topo.nodes}
        res = run(topo, silent(5), secrets=secrets, seed=seed)
        sent = set(res.trace.all_payload_ints())
        assert not sent & set(secrets.values())
        assert not sent & {p["dh_secret"] for p in res.private.values()}


class TestCost:
    @pytest.mark.parametrize("topo", [complete(24), random_geometric(24, 300, seed=1)], ids=["complete", "rgg"])
    def test_single_failure_ratio(self, topo):
        ntx = 2 * topo.diameter()
        base = run(topo, SimConfig(ntx=ntx))
        hit = run(topo, silent(topo.n, ntx=ntx))
        for v in hit.survivors:
            assert 1.8 <= hit.latency[v] / base.latency[v] <= 2.2

    def test_ring_cut_stretches_recovery(self):
        # losing one ring node leaves a line with twice the diameter, so recovery costs more than the first share
        topo = ring(12)
        ntx = 2 * topo.diameter()
        base = run(topo, SimConfig(ntx=ntx))
        hit = run(topo, silent(12, ntx=ntx))
        assert hit.value == sum(range(1, 12))
        assert max(hit.latency.values()) > 2 * max(base.latency.values())

    def test_latency_non_increasing_with_failures(self):
        topo = complete(24)
        lat = []
        for k in range(1, 9):
            res = run(topo, silent(*range(24, 24 - k, -1)))
            assert res.value == sum(range(1, 25 - k))
            lat.append(max(res.latency.values()))
        assert all(a >= b for a, b in zip(lat, lat[1:]))
        assert lat[0] > lat[-1]


class TestPeriodic:
    def test_fresh_masks_each_round(self):
        res = run_periodic(complete(5), SimConfig(ntx=2), SUM, {v: v for v in range(1, 6)}, 2)
        assert [r.value for r in res] == [15, 15]
        assert [r.seq_no for r in res] == [0, 1]
        a = res[0].trace.payloads(RoundPhase.SHARE_1.value)
        b = res[1].trace.payloads(RoundPhase.SHARE_1.value)
        assert all(a[v] != b[v] for v in a)

    def test_refresh_every_round(self):
        res = run_periodic(complete(4), SimConfig(ntx=2), SUM, {v: 1 for v in range(1, 5)}, 3,
                           refresh_policy=RefreshPolicy(threshold=1))
        assert all(r.setup_phases for r in res)
        assert all(r.phases[0].name == "DFKE_FLOOD" for r in res)
        lazy = run_periodic(complete(4), SimConfig(ntx=2), SUM, {v: 1 for v in range(1, 5)}, 3)
        assert [bool(r.setup_phases) for r in lazy] == [True, False, False]
        assert res[1].duration > lazy[1].duration

    def test_join(self):
        secrets = {v: 10 * v for v in range(1, 6)}
        res = run_periodic(complete(5), SimConfig(ntx=2), SUM, secrets, 4, joins={5: 2})
        assert [r.value for r in res] == [100, 100, 150, 150]
        assert [bool(r.setup_phases) for r in res] == [True, False, True, False]
        assert 5 in res[2].survivors

    def test_departure_persists(self):
        cfg = SimConfig(ntx=2, failure_plan=[FailureEvent(3, SILENT, round=1)])
        res = run_periodic(complete(4), cfg, SUM, lambda rnd: {v: v + rnd for v in range(1, 5)}, 3)
        assert [r.value for r in res] == [10, 1 + 2 + 4 + 3, 1 + 2 + 4 + 6]
        assert [r.recovery_used for r in res] == [False, True, False]

    def test_events_for_round(self):
        plan = [FailureEvent(2, SILENT, round=1)]
        assert events_for_round(plan, 0) == []
        assert events_for_round(plan, 1) == [FailureEvent(2, SILENT)]
        assert events_for_round(plan, 2) == [FailureEvent(2, FailurePhase.BEFORE_DFKE)]

    def test_bad_round_count(self):
        with pytest.raises(DomainError):
            run_periodic(complete(3), SimConfig(), SUM, {1: 1, 2: 2, 3: 3}, 0)
