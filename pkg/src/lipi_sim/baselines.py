"""Comparison protocols run on the same simulator and key stack.

* PPMP: ring masking in the unit group mod p**2.  One all-to-all round for
  the exponentials ``g**r_i``, one for the ciphertexts ``C_i``.
* SSS: every node deals Shamir shares of its secret to every other node
  (encrypted with the pairwise key), nodes sum the shares they hold and the
  sums are interpolated at zero.
* NSSS: like SSS but a dealer only reaches nodes within ``hop_limit`` hops,
  and sends Lagrange-weighted shares so the plain total of the per-node sums
  is the aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .dfke import KeyTable
from .errors import ConfigError, DomainError
from .modmath import (
    TAG_KEYSTREAM_DOWN,
    TAG_KEYSTREAM_UP,
    TAG_POLY,
    TAG_PPMP,
    derive_key,
    find_generator_mod_p2,
    is_prime,
    mod_inv,
    mod_pow,
    rand64,
)
from .stnet import FailurePhase, SimConfig, Timeline, Topology, glossy_flood, minicast_round, restricted_minicast
from .trace import AggregateResult, RoundStatus, RoundTrace

PROTOCOLS = ("lipi", "ppmp", "sss", "nsss")
DEFAULT_FIELD_PRIME = (1 << 61) - 1
DEFAULT_PPMP_PRIME = (1 << 31) - 1


def _alive_participants(topo: Topology, config: SimConfig, participants) -> list[int]:
    unsupported = [e.format() for e in config.failure_plan if e.phase is not FailurePhase.BEFORE_DFKE]
    if unsupported:
        raise ConfigError(f"baseline protocols only model failures before setup, got {unsupported}")
    members = sorted(set(topo.nodes if participants is None else participants))
    alive = [v for v in members if v not in config.dead()]
    if not alive:
        raise DomainError("no alive participants")
    return alive


def _sync(topo, config, timeline, trace, alive, seq_no, protocol):
    init = alive[0]
    flood = glossy_flood(topo, config, init, (seq_no, tuple(alive)), nodes=alive, stream=derive_key(seq_no, 0))
    timeline.add("SYNC_FLOOD", flood, "flood")
    trace.record("SYNC_FLOOD", {init: (seq_no, tuple(alive))}, flood.delivery)
    return init


def _result(protocol, seq_no, status, aggregate, alive, included, timeline, init, trace, private):
    return AggregateResult(protocol, seq_no, status, aggregate, frozenset(alive), frozenset(included), False,
                           {v: timeline.now for v in alive}, dict(sorted(timeline.radio_on.items())),
                           list(timeline.phases), init, trace, private=private)


# PPMP

@dataclass(frozen=True)
class PpmpParams:
    p: int
    g: int

    def __post_init__(self):
        if self.p < 3 or not is_prime(self.p):
            raise DomainError(f"PPMP modulus base {self.p} must be an odd prime")
        if not 1 < self.g < self.p * self.p:
            raise DomainError("PPMP generator out of range")

    @property
    def modulus(self) -> int:
        return self.p * self.p

    @classmethod
    def for_prime(cls, p: int = DEFAULT_PPMP_PRIME) -> "PpmpParams":
        return cls(p, find_generator_mod_p2(p))


def ring_neighbours(ring: list[int], v: int) -> tuple[int, int]:
    """(previous, next) of ``v`` on the cyclic ring."""
    k = ring.index(v)
    return ring[k - 1], ring[(k + 1) % len(ring)]


def ppmp_mask(params: PpmpParams, r_self: int, pub_prev: int, pub_next: int) -> int:
    m = params.modulus
    return mod_pow(pub_next * mod_inv(pub_prev, m) % m, r_self, m)


def ppmp_cipher(params: PpmpParams, x: int, ring_mask: int) -> int:
    m = params.modulus
    return (1 + x * params.p) * ring_mask % m


def ppmp_recover(params: PpmpParams, ciphers: Iterable[int]) -> int:
    m = params.modulus
    prod = 1
    for c in ciphers:
        prod = prod * c % m
    if (prod - 1) % params.p:
        raise DomainError("ciphertext product is not of the form 1 + s*p")
    return (prod - 1) // params.p


def ppmp_round(topo: Topology, config: SimConfig, secrets: Mapping[int, int], rng_seed: int = 0,
               params: PpmpParams | None = None, seq_no: int = 0, r_values: Mapping[int, int] | None = None,
               reuse_keys: bool = False, participants=None) -> AggregateResult:
    params = params or PpmpParams.for_prime()
    alive = _alive_participants(topo, config, participants)
    if len(alive) < 3:
        raise DomainError("PPMP needs a ring of at least 3 nodes")
    m = params.modulus
    order = params.p * (params.p - 1)
    timeline, trace = Timeline(), RoundTrace("ppmp", seq_no)
    init = _sync(topo, config, timeline, trace, alive, seq_no, "ppmp")

    epoch = 0 if reuse_keys else seq_no
    r = {}
    for v in alive:
        if r_values is not None and v in r_values:
            r[v] = r_values[v]
        else:
            r[v] = 1 + rand64(derive_key(rng_seed, epoch, v), 0, TAG_PPMP) % (order - 1)
    pubs = {v: mod_pow(params.g, r[v], m) for v in alive}
    keys_round = minicast_round(topo, config, pubs, alive, stream=derive_key(seq_no, 1))
    timeline.add("PPMP_KEYS", keys_round, "minicast")
    trace.record("PPMP_KEYS", pubs, keys_round.delivery)

    ring = alive
    masks, ciphers = {}, {}
    for v in alive:
        prev, nxt = ring_neighbours(ring, v)
        got = keys_round.delivery.get(v, {})
        if prev not in got or nxt not in got:
            continue
        masks[v] = ppmp_mask(params, r[v], got[prev], got[nxt])
        ciphers[v] = ppmp_cipher(params, int(secrets[v]), masks[v])
    share = minicast_round(topo, config, ciphers, alive, stream=derive_key(seq_no, 2))
    timeline.add("PPMP_SHARE", share, "minicast")
    trace.record("PPMP_SHARE", ciphers, share.delivery)

    aggregate = {}
    for v in alive:
        got = share.delivery.get(v, {})
        if len(got) == len(alive):
            aggregate[v] = ppmp_recover(params, got.values())
    status = RoundStatus.OK if len(aggregate) == len(alive) else RoundStatus.INCOMPLETE
    if sum(int(secrets[v]) for v in alive) >= params.p:
        status = RoundStatus.OVERFLOW
    private = {v: {"secret": secrets[v], "r": r[v], "ring_mask": masks.get(v)} for v in alive}
    return _result("ppmp", seq_no, status, aggregate, alive, alive, timeline, init, trace, private)


# Shamir sharing

def poly_eval(coeffs: list[int], x: int, q: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % q
    return acc


def dealer_poly(secret: int, degree: int, q: int, rng_seed: int, seq_no: int, dealer: int) -> list[int]:
    key = derive_key(rng_seed, seq_no, dealer)
    return [secret % q] + [rand64(key, k, TAG_POLY) % q for k in range(1, degree + 1)]


def lagrange_weight(y: int, ys: Iterable[int], q: int) -> int:
    """Coefficient of the value at ``y`` when interpolating at zero over ``ys``."""
    num, den = 1, 1
    for m in ys:
        if m == y:
            continue
        num = num * m % q
        den = den * (m - y) % q
    return num * mod_inv(den, q) % q


def lagrange_at_zero(points: Iterable[tuple[int, int]], q: int) -> int:
    points = [(y % q, v % q) for y, v in points]
    ys = [y for y, _ in points]
    if not points:
        raise DomainError("need at least one point")
    if len(set(ys)) != len(ys):
        raise DomainError("duplicate evaluation points")
    if 0 in ys:
        raise DomainError("evaluation points must be nonzero mod q")
    return sum(v * lagrange_weight(y, ys, q) for y, v in points) % q


def keystream(key: int, seq_no: int, sender: int, receiver: int) -> int:
    return rand64(key, seq_no, TAG_KEYSTREAM_UP if sender < receiver else TAG_KEYSTREAM_DOWN)


def encrypt_share(value: int, key: int, seq_no: int, sender: int, receiver: int) -> int:
    return value ^ keystream(key, seq_no, sender, receiver)


decrypt_share = encrypt_share


def _check_field(q: int, alive, secrets):
    if not is_prime(q):
        raise DomainError(f"field size {q} is not prime")
    if q <= max(alive):
        raise DomainError("field must be larger than every evaluation point")
    if q > 1 << 64:
        raise DomainError("field elements must fit in 64 bits")


def _reconstruct(topo, config, timeline, trace, ksum, alive, seq_no):
    rec = minicast_round(topo, config, ksum, alive, stream=derive_key(seq_no, 4))
    timeline.add("RECONSTRUCT", rec, "minicast")
    trace.record("RECONSTRUCT", ksum, rec.delivery)
    return rec


def sss_round(topo: Topology, config: SimConfig, secrets: Mapping[int, int], keys: Mapping[int, KeyTable],
              q: int = DEFAULT_FIELD_PRIME, degree: int | None = None, seq_no: int = 0, rng_seed: int = 0,
              participants=None) -> AggregateResult:
    alive = _alive_participants(topo, config, participants)
    _check_field(q, alive, secrets)
    n = len(alive)
    t = n - 1 if degree is None else degree
    if not 0 <= t <= n - 1:
        raise DomainError(f"degree {t} outside [0, {n - 1}]")
    timeline, trace = Timeline(), RoundTrace("sss", seq_no)
    init = _sync(topo, config, timeline, trace, alive, seq_no, "sss")

    polys = {i: dealer_poly(int(secrets[i]), t, q, rng_seed, seq_no, i) for i in alive}
    blocks = {}
    for i in alive:
        blocks[i] = {j: encrypt_share(poly_eval(polys[i], j, q), keys[i].key(j), seq_no, i, j)
                     for j in alive if j != i}
    widths = {i: n - 1 for i in alive}
    share = minicast_round(topo, config, blocks, alive, widths=widths, stream=derive_key(seq_no, 3))
    timeline.add("SSS_SHARE", share, "minicast")
    trace.record("SSS_SHARE", blocks, share.delivery)

    ksum = {}
    for j in alive:
        got = share.delivery.get(j, {})
        if len(got) < n:
            continue
        total = poly_eval(polys[j], j, q)
        for i, blk in got.items():
            if i != j:
                total += decrypt_share(blk[j], keys[j].key(i), seq_no, i, j)
        ksum[j] = total % q
    rec = _reconstruct(topo, config, timeline, trace, ksum, alive, seq_no)

    aggregate = {}
    for v in alive:
        pts = sorted(rec.delivery.get(v, {}).items())
        if len(pts) >= t + 1:
            aggregate[v] = lagrange_at_zero(pts[:t + 1], q)
    status = RoundStatus.OK if len(aggregate) == n else RoundStatus.RECONSTRUCTION_FAILED
    private = {v: {"secret": secrets[v], "poly": polys[v], "keys": dict(keys[v].pairwise),
                   "dh_secret": keys[v].secret} for v in alive}
    return _result("sss", seq_no, status, aggregate, alive, alive, timeline, init, trace, private)


def nsss_neighbourhoods(topo: Topology, alive, hop_limit: int, degree: int) -> dict[int, list[int]]:
    hood = {i: sorted(topo.neighborhood(i, hop_limit, alive)) for i in alive}
    short = sorted(i for i, h in hood.items() if len(h) < degree)
    if short:
        raise ConfigError(f"nodes {short} have fewer than {degree} neighbours within {hop_limit} hops")
    return hood


def nsss_round(topo: Topology, config: SimConfig, secrets: Mapping[int, int], keys: Mapping[int, KeyTable],
               q: int = DEFAULT_FIELD_PRIME, degree: int = 2, hop_limit: int = 2, seq_no: int = 0,
               rng_seed: int = 0, participants=None) -> AggregateResult:
    """``degree`` is the share threshold d: polynomials have degree d-1."""
    alive = _alive_participants(topo, config, participants)
    _check_field(q, alive, secrets)
    if not 1 <= degree < len(alive):
        raise DomainError(f"threshold {degree} must lie in [1, n)")
    hood = nsss_neighbourhoods(topo, alive, hop_limit, degree)
    timeline, trace = Timeline(), RoundTrace("nsss", seq_no)
    init = _sync(topo, config, timeline, trace, alive, seq_no, "nsss")

    polys = {i: dealer_poly(int(secrets[i]), degree - 1, q, rng_seed, seq_no, i) for i in alive}
    weighted, blocks = {}, {}
    for i in alive:
        holders = hood[i] + [i]
        weighted[i] = {j: poly_eval(polys[i], j, q) * lagrange_weight(j, holders, q) % q for j in holders}
        blocks[i] = {j: encrypt_share(weighted[i][j], keys[i].key(j), seq_no, i, j) for j in hood[i]}
    widths = {i: len(hood[i]) for i in alive}
    share = restricted_minicast(topo, config, blocks, alive, hop_limit, widths=widths, stream=derive_key(seq_no, 3))
    timeline.add("NSSS_SHARE", share, "minicast")
    trace.record("NSSS_SHARE", blocks, share.delivery)

    ksum = {}
    for j in alive:
        got = share.delivery.get(j, {})
        expected = {i for i in alive if j in hood[i]}
        if not expected <= got.keys():
            continue
        total = weighted[j][j]
        for i in expected:
            total += decrypt_share(got[i][j], keys[j].key(i), seq_no, i, j)
        ksum[j] = total % q
    rec = _reconstruct(topo, config, timeline, trace, ksum, alive, seq_no)

    aggregate = {}
    for v in alive:
        got = rec.delivery.get(v, {})
        if len(got) == len(alive):
            aggregate[v] = sum(got.values()) % q
    status = RoundStatus.OK if len(aggregate) == len(alive) else RoundStatus.RECONSTRUCTION_FAILED
    private = {v: {"secret": secrets[v], "poly": polys[v], "keys": dict(keys[v].pairwise),
                   "dh_secret": keys[v].secret, "holders": hood[v] + [v]} for v in alive}
    return _result("nsss", seq_no, status, aggregate, alive, alive, timeline, init, trace, private)
