"""Pairwise Diffie-Hellman key establishment over one flood and one all-to-all round."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .errors import DomainError
from .modmath import (
    DEFAULT_DH_PRIME,
    TAG_DH_FOLD,
    TAG_DH_SECRET,
    ModParams,
    derive_key,
    mod_pow,
    rand64,
)
from .stnet import SimConfig, Timeline, Topology, glossy_flood, minicast_round
from .trace import RoundTrace


@dataclass
class KeyTable:
    owner: int
    secret: int
    public: int
    pairwise: dict[int, int] = field(default_factory=dict)
    raw: dict[int, int] = field(default_factory=dict)  # unfolded shared values

    def key(self, peer: int) -> int:
        return self.pairwise[peer]


@dataclass
class DfkeResult:
    tables: dict[int, KeyTable]
    params: ModParams
    timeline: Timeline
    excluded: frozenset  # alive nodes the parameter flood never reached
    trace: RoundTrace


@dataclass(frozen=True)
class RefreshPolicy:
    threshold: int = 100
    on_membership_change: bool = True

    def __post_init__(self):
        if self.threshold < 1:
            raise DomainError("refresh threshold must be >= 1")


def key_refresh_due(rounds_since_refresh: int, policy: RefreshPolicy, membership_changed: bool = False) -> bool:
    if membership_changed and policy.on_membership_change:
        return True
    return rounds_since_refresh >= policy.threshold


def default_params() -> ModParams:
    return ModParams.for_prime(DEFAULT_DH_PRIME)


def draw_secret(node: int, params: ModParams, rng_seed: int) -> int:
    """Uniform-ish exponent in [2, p-2] from the node's seeded stream."""
    return 2 + rand64(derive_key(rng_seed, node), 0, TAG_DH_SECRET) % (params.p - 3)


def public_value(secret: int, params: ModParams) -> int:
    return mod_pow(params.g, secret, params.p)


def shared_value(peer_public: int, secret: int, params: ModParams) -> int:
    return mod_pow(peer_public, secret, params.p)


def fold_key(shared: int) -> int:
    """Reduce a shared group element to the 64-bit key width."""
    return derive_key(shared, TAG_DH_FOLD)


def dfke_round(topo: Topology, config: SimConfig, mod_params: ModParams | None = None, rng_seed: int = 0,
               participants: Iterable[int] | None = None, initiator: int | None = None,
               stream: int = 0) -> DfkeResult:
    params = mod_params or default_params()
    members = sorted(set(topo.nodes if participants is None else participants))
    alive = [v for v in members if v not in config.dead()]
    if initiator is None:
        if not alive:
            raise DomainError("no alive participant to run key exchange")
        initiator = alive[0]
    timeline = Timeline()
    trace = RoundTrace("dfke")

    flood = glossy_flood(topo, config, initiator, (params.p, params.g), nodes=members,
                         stream=derive_key(stream, 1))
    timeline.add("DFKE_FLOOD", flood, "flood")
    trace.record("DFKE_FLOOD", {initiator: (params.p, params.g)}, flood.delivery)
    reached = sorted(flood.delivery)
    excluded = frozenset(set(alive) - set(reached))

    secrets = {v: draw_secret(v, params, rng_seed) for v in reached}
    publics = {v: public_value(d, params) for v, d in secrets.items()}
    share = minicast_round(topo, config, publics, reached, stream=derive_key(stream, 2))
    timeline.add("DFKE_SHARE", share, "minicast")
    trace.record("DFKE_SHARE", publics, share.delivery)

    tables = {}
    for v in reached:
        got = share.delivery.get(v, {})
        raw = {j: shared_value(pub, secrets[v], params) for j, pub in got.items() if j != v}
        tables[v] = KeyTable(v, secrets[v], publics[v], {j: fold_key(s) for j, s in raw.items()}, raw)
    return DfkeResult(tables, params, timeline, excluded, trace)
