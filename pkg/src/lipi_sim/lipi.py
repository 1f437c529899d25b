"""One aggregation round: sync flood, masked all-to-all share, de-mask.

If the initiator is missing some participants' values after the first share,
it floods the list of missing ids; the rest re-mask without the missing peers'
noise and share once more.  A round never runs more than two shares.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from .aggspec import AggregationSpec, demask, mask_all, noise_vector, recompute_mask
from .dfke import KeyTable, RefreshPolicy, dfke_round, key_refresh_due
from .errors import DomainError, IncompleteSetError
from .modmath import ModParams, derive_key
from .stnet import (
    FailureEvent,
    FailurePhase,
    SimConfig,
    Timeline,
    Topology,
    crashed,
    glossy_flood,
    minicast_round,
)
from .trace import AggregateResult, RoundPhase, RoundStatus, RoundTrace


def detect_missing(received: Mapping[int, Any], expected: Iterable[int]) -> set[int]:
    """Ids in ``expected`` with no entry in one node's received vector."""
    return set(expected) - set(received)


def _silenced(config: SimConfig, gone: Iterable[int], used: Mapping[int, int] | None = None) -> SimConfig:
    """Config for a later phase: ``gone`` nodes are off, MID_SHARE budgets shrink by ``used``."""
    gone = set(gone)
    used = used or {}
    events = []
    for e in config.failure_plan:
        if e.node in gone:
            continue
        if e.phase is FailurePhase.MID_SHARE:
            events.append(replace(e, after_k=e.after_k - used.get(e.node, 0)))
        else:
            events.append(e)
    events += [FailureEvent(v, FailurePhase.AFTER_DFKE_SILENT) for v in sorted(gone)]
    return config.with_failures(events)


def _stream(seq_no: int, phase: RoundPhase) -> int:
    return derive_key(seq_no, list(RoundPhase).index(phase))


def _key_matrix(ids: list[int], keys: Mapping[int, KeyTable]) -> np.ndarray:
    n = len(ids)
    out = np.zeros((n, n), dtype=np.uint64)
    for a in range(n):
        pw = keys[ids[a]].pairwise
        for b in range(a + 1, n):
            out[a, b] = pw[ids[b]]
    return out


def _finish(spec, expected, delivery, survivors):
    """Per-survivor de-masking; returns (aggregates, nodes that lacked values)."""
    out, short = {}, set()
    for v in sorted(survivors):
        got = delivery.get(v, {})
        try:
            out[v] = demask(spec, [got[o] for o in sorted(expected) if o in got], expected=expected)
        except IncompleteSetError:
            short.add(v)
    return out, short


def lipi_round(topo: Topology, config: SimConfig, spec: AggregationSpec, secrets: Mapping[int, Any],
               keys: Mapping[int, KeyTable], seq_no: int = 0, initiator: int | None = None,
               participants: Iterable[int] | None = None) -> AggregateResult:
    listed = sorted(set(keys) if participants is None else set(participants))
    if not listed:
        raise DomainError("no participants")
    missing_keys = [v for v in listed if v not in keys or v not in secrets]
    if missing_keys:
        raise DomainError(f"nodes {missing_keys} have no key table or no secret")
    for v in listed:
        absent = [j for j in listed if j != v and j not in keys[v].pairwise]
        if absent:
            raise DomainError(f"node {v} has no pairwise key with {absent}")
    if initiator is None:
        initiator = listed[0]
    if initiator not in listed:
        raise DomainError(f"initiator {initiator} is not a participant")

    timeline = Timeline()
    trace = RoundTrace("lipi", seq_no)
    path = [RoundPhase.SYNC_FLOOD]
    private = {v: {"secret": secrets[v], "dh_secret": keys[v].secret, "keys": dict(keys[v].pairwise)}
               for v in listed}

    def result(status, aggregate=None, survivors=(), included=(), recovery=False):
        lat = {v: timeline.now for v in sorted(survivors)}
        return AggregateResult("lipi", seq_no, status, aggregate or {}, frozenset(survivors), frozenset(included),
                               recovery, lat, dict(sorted(timeline.radio_on.items())), list(timeline.phases),
                               initiator, trace, tuple(path), private=private)

    if initiator in config.dead():
        return result(RoundStatus.INITIATOR_FAILED)

    sync = glossy_flood(topo, config, initiator, (seq_no, tuple(listed)), nodes=listed,
                        stream=_stream(seq_no, RoundPhase.SYNC_FLOOD))
    timeline.add(RoundPhase.SYNC_FLOOD.value, sync, "flood")
    trace.record(RoundPhase.SYNC_FLOOD.value, {initiator: (seq_no, tuple(listed))}, sync.delivery)
    synced = [v for v in listed if v in sync.delivery]

    # every synced node masks against the full listed set
    ids = listed
    masked_all = mask_all(spec, ids, [secrets[v] for v in ids], _key_matrix(ids, keys), seq_no)
    masked = {m.owner: m for m in masked_all if m.owner in synced}

    path.append(RoundPhase.SHARE_1)
    share1 = minicast_round(topo, config, masked, listed, stream=_stream(seq_no, RoundPhase.SHARE_1))
    timeline.add(RoundPhase.SHARE_1.value, share1, "minicast")
    trace.record(RoundPhase.SHARE_1.value, {v: m.value for v, m in masked.items()}, share1.delivery)
    down = crashed(share1, config) | (set(listed) - set(share1.delivery))
    alive = [v for v in synced if v not in down]
    if initiator in down:
        return result(RoundStatus.INITIATOR_FAILED)

    missing = detect_missing(share1.delivery[initiator], listed)
    if not missing:
        path.append(RoundPhase.DONE)
        agg, short = _finish(spec, listed, share1.delivery, alive)
        status = RoundStatus.INCOMPLETE if short else RoundStatus.OK
        return result(status, agg, alive, listed)

    # recovery: the initiator's view decides who is missing
    path.append(RoundPhase.MISSING_FLOOD)
    cfg2 = _silenced(config, down | (set(listed) - set(synced)), share1.transmissions)
    payload = tuple(sorted(missing))
    flood = glossy_flood(topo, cfg2, initiator, payload, nodes=listed,
                         stream=_stream(seq_no, RoundPhase.MISSING_FLOOD))
    timeline.add(RoundPhase.MISSING_FLOOD.value, flood, "flood")
    trace.record(RoundPhase.MISSING_FLOOD.value, {initiator: payload}, flood.delivery)

    path.append(RoundPhase.SHARE_2_RECOVERY)
    remaining = [v for v in listed if v not in missing]
    informed = [v for v in remaining if v in flood.delivery]
    remasked = {}
    for v in informed:
        noises = noise_vector(spec, v, keys[v].pairwise, seq_no, peers=listed)
        remasked[v] = recompute_mask(spec, v, secrets[v], noises, seq_no, missing)
    share2 = minicast_round(topo, cfg2, remasked, remaining,
                            stream=_stream(seq_no, RoundPhase.SHARE_2_RECOVERY))
    timeline.add(RoundPhase.SHARE_2_RECOVERY.value, share2, "minicast")
    trace.record(RoundPhase.SHARE_2_RECOVERY.value, {v: m.value for v, m in remasked.items()}, share2.delivery)
    down2 = crashed(share2, cfg2)
    alive2 = [v for v in informed if v not in down2]
    path.append(RoundPhase.DONE)
    if initiator in down2:
        return result(RoundStatus.INITIATOR_FAILED, recovery=True)
    if set(remaining) - set(remasked) or down2:
        # a node expected in the recovery share never sent or crashed mid-way
        agg, _ = _finish(spec, remaining, share2.delivery, alive2)
        if len(agg) != len(alive2):
            return result(RoundStatus.RECOVERY_FAILED, {}, alive2, remaining, True)
    agg, short = _finish(spec, remaining, share2.delivery, alive2)
    status = RoundStatus.INCOMPLETE if short else RoundStatus.OK
    return result(status, agg, alive2, remaining, True)


# periodic operation

def events_for_round(plan, rnd: int):
    """Failure events active in round ``rnd``, including earlier departures."""
    out = []
    for e in plan:
        if e.round == rnd:
            out.append(replace(e, round=0))
        elif e.round < rnd:
            out.append(FailureEvent(e.node, FailurePhase.BEFORE_DFKE))
    return out


def setup_config(config: SimConfig) -> SimConfig:
    """Failures that matter while keys are exchanged: only nodes already gone."""
    return config.with_failures([e for e in config.failure_plan if e.phase is FailurePhase.BEFORE_DFKE])


def run_periodic(topo: Topology, config: SimConfig, spec: AggregationSpec,
                 secrets: Mapping[int, Any] | Callable[[int], Mapping[int, Any]], num_rounds: int,
                 refresh_policy: RefreshPolicy | None = None, mod_params: ModParams | None = None,
                 joins: Mapping[int, int] | None = None, first_seq: int = 0) -> list[AggregateResult]:
    """Run ``num_rounds`` rounds with advancing seq_no and policy-driven key refresh.

    ``joins`` maps a node to the round it first appears in; other nodes are
    present from round 0.  A failure event's ``round`` field says when it hits;
    nodes stay gone in every later round.
    """
    if num_rounds < 1:
        raise DomainError("num_rounds must be >= 1")
    policy = refresh_policy or RefreshPolicy()
    joins = dict(joins or {})
    results = []
    tables: dict[int, KeyTable] = {}
    keyed: frozenset = frozenset()
    since = 0
    for rnd in range(num_rounds):
        cfg = config.with_failures(events_for_round(config.failure_plan, rnd))
        present = frozenset(v for v in topo.nodes if joins.get(v, 0) <= rnd)
        departed = {e.node for e in config.failure_plan if e.round < rnd}
        members = present - departed
        changed = bool(keyed) and members != keyed
        setup = None
        if not tables or key_refresh_due(since, policy, changed):
            setup = dfke_round(topo, setup_config(cfg), mod_params, rng_seed=derive_key(config.rng_seed, rnd),
                               participants=sorted(members), stream=derive_key(first_seq + rnd, 0xDF))
            tables = setup.tables
            keyed = members
            since = 0
        day_secrets = secrets(rnd) if callable(secrets) else secrets
        listed = sorted(v for v in keyed if v in tables)
        res = lipi_round(topo, cfg, spec, day_secrets, tables, seq_no=first_seq + rnd, participants=listed)
        if setup is not None:
            res = with_setup(res, setup.timeline)
        results.append(res)
        since += 1
    return results


def with_setup(res: AggregateResult, setup: Timeline) -> AggregateResult:
    """Fold a key-setup timeline into the front of a round result."""
    tl = Timeline()
    tl.extend(setup)
    body = Timeline(list(res.phases), dict(res.radio_on))
    tl.extend(body)
    shift = setup.now
    return replace(res,
                   phases=tl.phases,
                   setup_phases=list(setup.phases),
                   setup_radio_on=dict(sorted(setup.radio_on.items())),
                   latency={v: t + shift for v, t in res.latency.items()},
                   radio_on=dict(sorted(tl.radio_on.items())))
