"""Semi-honest collusion experiments over round traces.

A coalition knows its members' private state and everything broadcast in
the round, nothing more.  Each attack reports whether the target's secret is
pinned down (EXACT), left open (AMBIGUOUS) or could not be attempted (FAILED).
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .aggspec import MASK64, MOD64, AggregationSpec, Family, noise_for
from .baselines import PpmpParams, decrypt_share, lagrange_at_zero, lagrange_weight, ring_neighbours
from .errors import DomainError, NoInverseError
from .modmath import mod_inv
from .trace import AggregateResult, RoundTrace


class AttackStatus(enum.Enum):
    EXACT = "exact"
    AMBIGUOUS = "ambiguous"
    FAILED = "failed"


@dataclass(frozen=True)
class AttackOutcome:
    target: int
    status: AttackStatus
    recovered: Any = None
    residual: Any = None


@dataclass
class Coalition:
    members: frozenset
    private: dict[int, dict] = field(default_factory=dict)

    @classmethod
    def from_result(cls, result: AggregateResult, members: Iterable[int]) -> "Coalition":
        members = frozenset(members)
        return cls(members, {m: result.private[m] for m in members if m in result.private})


def _listed(trace: RoundTrace) -> list[int]:
    sync = trace.payloads("SYNC_FLOOD")
    if not sync:
        raise DomainError("trace has no sync payload")
    (_, (_, listed)), = sync.items()
    return list(listed)


# LiPI

def lipi_coalition_attack(trace: RoundTrace, coalition: Coalition, target: int,
                          spec: AggregationSpec | None = None) -> AttackOutcome:
    """Strip every pairwise noise term the coalition can regenerate from the target's mask."""
    spec = spec or AggregationSpec()
    if target in coalition.members:
        raise DomainError("target must be outside the coalition")
    peers = set(_listed(trace)) - {target}
    phase = "SHARE_1"
    if target in trace.payloads("SHARE_2_RECOVERY"):
        phase = "SHARE_2_RECOVERY"
        (_, missing), = trace.payloads("MISSING_FLOOD").items()
        peers -= set(missing)
    masked = trace.payloads(phase).get(target)
    if masked is None:
        return AttackOutcome(target, AttackStatus.FAILED)
    residual = masked
    known = sorted(peers & coalition.members)
    for m in known:
        key = coalition.private[m]["keys"][target]
        q = noise_for(spec, key, trace.seq_no, target, m)
        if spec.family is Family.GM:
            residual = residual * mod_inv(q, spec.gm_modulus) % spec.gm_modulus
        else:
            residual = (residual - q) & MASK64
    if peers <= coalition.members:
        return AttackOutcome(target, AttackStatus.EXACT, residual, residual)
    return AttackOutcome(target, AttackStatus.AMBIGUOUS, None, residual)


def lipi_consistent_secrets(residual: int, unknown_peers: int, modulus: int = 256) -> set[int]:
    """Target secrets mod ``modulus`` consistent with a stripped mask.

    Each peer outside the coalition contributes one unknown noise term; the
    set of reachable values is built one term at a time.
    """
    reach = {residual % modulus}
    for _ in range(unknown_peers):
        reach = {(x - r) % modulus for x in reach for r in range(modulus)}
    return reach


def aggregate_subtraction(aggregate: int, coalition_secrets: Mapping[int, int], participants: Iterable[int],
                          target: int) -> AttackOutcome:
    """What any scheme leaks: the total minus the coalition's own inputs."""
    others = set(participants) - {target}
    if others <= set(coalition_secrets):
        value = (aggregate - sum(coalition_secrets[m] for m in others)) & MASK64
        return AttackOutcome(target, AttackStatus.EXACT, value)
    return AttackOutcome(target, AttackStatus.AMBIGUOUS)


def lipi_rate_of_reuse_check(traces: Sequence[RoundTrace], target: int, secrets: Sequence[int]) -> bool:
    """True when no consecutive pair of masks leaks the change in the target's secret."""
    if len(traces) != len(secrets):
        raise DomainError("one secret per trace")
    for a, b, sa, sb in zip(traces, traces[1:], secrets, secrets[1:]):
        dm = (b.payloads("SHARE_1")[target] - a.payloads("SHARE_1")[target]) % MOD64
        if dm == (int(sb) - int(sa)) % MOD64:
            return False
    return True


# PPMP

def ppmp_coalition_attack(trace: RoundTrace, coalition: Coalition, target: int, params: PpmpParams) -> AttackOutcome:
    """Rebuild the target's ring mask from both ring neighbours' exponents."""
    keys = trace.payloads("PPMP_KEYS")
    ciphers = trace.payloads("PPMP_SHARE")
    if target not in keys or target not in ciphers:
        return AttackOutcome(target, AttackStatus.FAILED)
    prev, nxt = ring_neighbours(_listed(trace), target)
    if not {prev, nxt} <= coalition.members:
        return AttackOutcome(target, AttackStatus.AMBIGUOUS)
    m = params.modulus
    pub = keys[target]
    ring_mask = pow(pub, coalition.private[nxt]["r"], m) * mod_inv(pow(pub, coalition.private[prev]["r"], m), m) % m
    plain = ciphers[target] * mod_inv(ring_mask, m) % m
    if (plain - 1) % params.p:
        return AttackOutcome(target, AttackStatus.FAILED)
    return AttackOutcome(target, AttackStatus.EXACT, (plain - 1) // params.p)


ppmp_adjacent_attack = ppmp_coalition_attack


@dataclass(frozen=True)
class KeyReuseOutcome:
    target: int
    status: AttackStatus
    ratio: int | None = None
    delta: int | None = None  # recovered x(t+1) - x(t)


def ppmp_key_reuse_attack(trace_t: RoundTrace, trace_t1: RoundTrace, target: int, p_enc: int) -> KeyReuseOutcome:
    """Divide consecutive ciphertexts; with reused exponents the ring mask cancels."""
    m = p_enc * p_enc
    try:
        c0 = trace_t.payloads("PPMP_SHARE")[target]
        c1 = trace_t1.payloads("PPMP_SHARE")[target]
        ratio = c1 * mod_inv(c0, m) % m
    except (KeyError, NoInverseError):
        return KeyReuseOutcome(target, AttackStatus.FAILED)
    if (ratio - 1) % p_enc:
        return KeyReuseOutcome(target, AttackStatus.FAILED, ratio)
    delta = (ratio - 1) // p_enc
    if delta > p_enc // 2:
        delta -= p_enc
    return KeyReuseOutcome(target, AttackStatus.EXACT, ratio, delta)


# Shamir sharing

def sss_consistent_secrets(shares: Sequence[tuple[int, int]], degree: int, q: int) -> set[int]:
    """Constant terms of every degree-``degree`` polynomial over F_q through ``shares``.

    Enumerates the non-constant coefficients; the first share then fixes the
    constant term and the rest are checked.
    """
    if q > 101:
        raise DomainError("exhaustive enumeration is limited to q <= 101")
    shares = [(y % q, v % q) for y, v in shares]
    if not shares:
        return set(range(q))
    (y0, v0), rest = shares[0], shares[1:]
    found = set()
    for tail in itertools.product(range(q), repeat=degree):
        coeffs = (0,) + tail

        def ev(x):
            acc = 0
            for c in reversed(coeffs):
                acc = (acc * x + c) % q
            return acc

        a0 = (v0 - ev(y0)) % q
        if all((a0 + ev(y)) % q == v for y, v in rest):
            found.add(a0)
    return found


def sss_subset_ambiguity(shares: Sequence[tuple[int, int]], degree: int, q: int) -> bool:
    if len(shares) > degree:
        return False
    return sss_consistent_secrets(shares, degree, q) == set(range(q))


def _decrypt_for(trace, phase, coalition, target):
    blocks = trace.payloads(phase).get(target)
    if blocks is None:
        return None
    out = []
    for m in sorted(coalition.members):
        keys = coalition.private.get(m, {}).get("keys", {})
        if m in blocks and target in keys:
            out.append((m, decrypt_share(blocks[m], keys[target], trace.seq_no, target, m)))
    return out


def sss_coalition_attack(trace: RoundTrace, coalition: Coalition, target: int, q: int, degree: int) -> AttackOutcome:
    shares = _decrypt_for(trace, "SSS_SHARE", coalition, target)
    if shares is None:
        return AttackOutcome(target, AttackStatus.FAILED)
    if len(shares) > degree:
        return AttackOutcome(target, AttackStatus.EXACT, lagrange_at_zero(shares[:degree + 1], q))
    return AttackOutcome(target, AttackStatus.AMBIGUOUS, residual=shares)


def nsss_coalition_attack(trace: RoundTrace, coalition: Coalition, target: int, q: int, threshold: int,
                          holders: Sequence[int]) -> AttackOutcome:
    """``holders`` is the target's public share set (its neighbourhood plus itself)."""
    weighted = _decrypt_for(trace, "NSSS_SHARE", coalition, target)
    if weighted is None:
        return AttackOutcome(target, AttackStatus.FAILED)
    shares = [(y, w * mod_inv(lagrange_weight(y, holders, q), q) % q) for y, w in weighted]
    if len(shares) >= threshold:
        return AttackOutcome(target, AttackStatus.EXACT, lagrange_at_zero(shares[:threshold], q))
    return AttackOutcome(target, AttackStatus.AMBIGUOUS, residual=shares)
