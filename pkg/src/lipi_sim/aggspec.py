"""Masking algebra: noise shaping, masking, de-masking and QAM transforms.

Additive families (SUM, AM and the fixed-point QAM families) work in the ring
of integers mod 2**64.  GM works in the multiplicative group of a prime field
Z_Q.  Pairwise noise is symmetric: the node with the smaller id adds the
negated (or inverted) draw, the larger id adds the draw itself, so every pair
cancels under the family's combining operation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

import numpy as np

from .errors import DomainError, IncompleteSetError, ProtocolError
from .modmath import (
    MASK64,
    TAG_NOISE,
    bit_reverse,
    bit_reverse64_array,
    is_prime,
    mod_inv,
    rand64,
    rand64_array,
)

MOD64 = 1 << 64
DEFAULT_GM_MODULUS = (1 << 61) - 1


class Family(enum.Enum):
    SUM = "sum"
    AM = "am"
    GM = "gm"
    QAM_HARMONIC = "harmonic"
    QAM_POWER = "power"
    QAM_LOG = "log"

    @property
    def additive(self) -> bool:
        return self is not Family.GM

    @property
    def quasi_arithmetic(self) -> bool:
        return self in (Family.QAM_HARMONIC, Family.QAM_POWER, Family.QAM_LOG)


@dataclass(frozen=True)
class AggregationSpec:
    family: Family = Family.SUM
    gm_modulus: int = DEFAULT_GM_MODULUS
    exponent: float | None = None  # QAM_POWER only
    fixed_point_bits: int = 32  # QAM families encode g(x) as signed fixed point
    value_width: int = 64

    def __post_init__(self):
        if self.family is Family.GM and not is_prime(self.gm_modulus):
            raise DomainError(f"GM modulus {self.gm_modulus} is not prime")
        if self.family is Family.QAM_POWER and not self.exponent:
            raise DomainError("QAM_POWER needs a non-zero exponent")
        if self.value_width != 64:
            raise DomainError("only 64-bit values are supported")

    @classmethod
    def parse(cls, text: str) -> "AggregationSpec":
        """``sum``, ``am``, ``gm``, ``gm:<Q>``, ``harmonic``, ``log`` or ``power:<e>``."""
        name, _, arg = text.strip().lower().partition(":")
        try:
            family = Family(name)
        except ValueError:
            raise DomainError(f"unknown aggregation family {text!r}") from None
        if family is Family.QAM_POWER:
            return cls(family, exponent=float(arg))
        if family is Family.GM and arg:
            return cls(family, gm_modulus=int(arg))
        return cls(family)

    def describe(self) -> str:
        if self.family is Family.QAM_POWER:
            return f"power:{self.exponent:g}"
        if self.family is Family.GM and self.gm_modulus != DEFAULT_GM_MODULUS:
            return f"gm:{self.gm_modulus}"
        return self.family.value

    @property
    def modulus(self) -> int:
        return MOD64 if self.family.additive else self.gm_modulus


@dataclass(frozen=True)
class MaskedValue:
    owner: int
    value: int
    seq_no: int


@dataclass(frozen=True)
class Mean:
    """Arithmetic mean kept as an exact fraction plus its decimal value."""

    exact: Fraction

    @property
    def value(self) -> float:
        return float(self.exact)

    @property
    def numerator(self) -> int:
        return self.exact.numerator

    @property
    def denominator(self) -> int:
        return self.exact.denominator


@dataclass(frozen=True)
class GeoMean:
    product: int
    count: int

    @property
    def value(self) -> float:
        return _nth_root(self.product, self.count)


def _nth_root(x: int, n: int) -> float:
    if x == 0:
        return 0.0
    root = math.exp(math.log(x) / n)
    # one Newton step on the float estimate keeps exact powers exact
    root = root - (root**n - x) / (n * root ** (n - 1)) if n > 1 else root
    return root


# QAM transforms

def qam_forward(spec: AggregationSpec | Family, x: float, exponent: float | None = None) -> float:
    family, exponent = _family_and_exponent(spec, exponent)
    if family in (Family.AM, Family.SUM):
        return float(x)
    if family is Family.QAM_HARMONIC:
        if x == 0:
            raise DomainError("harmonic transform undefined at 0")
        return 1.0 / x
    if family is Family.QAM_POWER:
        if x < 0 and not float(exponent).is_integer():
            raise DomainError("fractional power transform needs x >= 0")
        return float(x) ** exponent
    if family in (Family.QAM_LOG, Family.GM):
        if x <= 0:
            raise DomainError("log transform needs x > 0")
        return math.log(x)
    raise DomainError(f"no transform for {family}")


def qam_inverse(spec: AggregationSpec | Family, y: float, exponent: float | None = None) -> float:
    family, exponent = _family_and_exponent(spec, exponent)
    if family in (Family.AM, Family.SUM):
        return float(y)
    if family is Family.QAM_HARMONIC:
        if y == 0:
            raise DomainError("harmonic inverse undefined at 0")
        return 1.0 / y
    if family is Family.QAM_POWER:
        if y < 0 and not float(exponent).is_integer():
            raise DomainError("fractional power inverse needs y >= 0")
        if y < 0:
            return -((-y) ** (1.0 / exponent))
        return y ** (1.0 / exponent)
    if family in (Family.QAM_LOG, Family.GM):
        return math.exp(y)
    raise DomainError(f"no transform for {family}")


def _family_and_exponent(spec, exponent):
    if isinstance(spec, AggregationSpec):
        return spec.family, spec.exponent if exponent is None else exponent
    return spec, exponent


def g_mean(spec: AggregationSpec | Family, xs, exponent: float | None = None) -> float:
    """Plain (unmasked) quasi-arithmetic mean, used as an oracle."""
    ys = [qam_forward(spec, x, exponent) for x in xs]
    return qam_inverse(spec, math.fsum(ys) / len(ys), exponent)


def encode_secret(spec: AggregationSpec, secret) -> int:
    """Map a raw secret into the family's masking domain."""
    if spec.family.quasi_arithmetic:
        scaled = round(qam_forward(spec, secret) * (1 << spec.fixed_point_bits))
        if abs(scaled) >> 63:
            raise DomainError(f"transformed secret {secret} overflows the fixed-point encoding")
        return scaled & MASK64
    secret = int(secret)
    if spec.family is Family.GM:
        if not 0 < secret < spec.gm_modulus:
            raise DomainError(f"GM secret {secret} outside [1, Q)")
        return secret
    if not 0 <= secret <= MASK64:
        raise DomainError(f"secret {secret} is not an unsigned 64-bit value")
    return secret


# noise

def _gm_draw(key: int, seq_no: int, modulus: int, tag: int) -> int:
    """Nonzero element of Z_Q from the keyed stream; zero draws bump the tag."""
    while True:
        r = rand64(key, seq_no, tag) % modulus
        if r:
            return r
        tag += 1


def noise_for(spec: AggregationSpec, key: int, seq_no: int, self_id: int, peer_id: int) -> int:
    """The noise element node ``self_id`` contributes for ``peer_id``."""
    if self_id == peer_id:
        raise DomainError("a node does not draw noise for itself")
    fam = spec.family
    if fam is Family.SUM:
        r = rand64(key, seq_no, TAG_NOISE)
        return r if self_id < peer_id else (MOD64 - r) & MASK64
    if fam is Family.GM:
        q = spec.gm_modulus
        r = _gm_draw(key, seq_no, q, TAG_NOISE) * _gm_draw(bit_reverse(key, 64), seq_no, q, TAG_NOISE) % q
        return mod_inv(r, q) if self_id < peer_id else r
    # AM and the QAM families share the two-stream additive form
    r = (rand64(key, seq_no, TAG_NOISE) + rand64(bit_reverse(key, 64), seq_no, TAG_NOISE)) & MASK64
    return (MOD64 - r) & MASK64 if self_id < peer_id else r


def noise_vector(spec: AggregationSpec, self_id: int, keys: Mapping[int, int], seq_no: int, peers=None) -> dict:
    """Noise for every peer in ``peers`` (default: every key holder)."""
    peers = sorted(keys) if peers is None else sorted(peers)
    return {j: noise_for(spec, keys[j], seq_no, self_id, j) for j in peers if j != self_id}


def mask(spec: AggregationSpec, owner: int, secret, noises: Mapping[int, int], seq_no: int) -> MaskedValue:
    s = encode_secret(spec, secret)
    if spec.family is Family.GM:
        q = spec.gm_modulus
        m = s
        for v in noises.values():
            m = m * v % q
        return MaskedValue(owner, m, seq_no)
    return MaskedValue(owner, (s + sum(noises.values())) & MASK64, seq_no)


def recompute_mask(spec: AggregationSpec, owner: int, secret, noises: Mapping[int, int], seq_no: int, missing) -> MaskedValue:
    if owner in missing:
        raise DomainError("a node cannot recompute its mask while listed as missing")
    kept = {j: v for j, v in noises.items() if j not in missing}
    return mask(spec, owner, secret, kept, seq_no)


def demask(spec: AggregationSpec, masked, participant_count: int | None = None, expected=None):
    """Combine one masked value per participant into the aggregate.

    Returns an ``int`` for SUM, :class:`Mean` for AM, :class:`GeoMean` for GM
    and a float for the quasi-arithmetic families.
    """
    masked = list(masked)
    owners = [m.owner for m in masked]
    if len(set(owners)) != len(owners):
        raise ProtocolError("duplicate masked values for one owner")
    if len({m.seq_no for m in masked}) > 1:
        raise ProtocolError("masked values from different seq_no cannot be combined")
    if expected is not None:
        missing = set(expected) - set(owners)
        if missing:
            raise IncompleteSetError(missing)
    n = len(masked) if participant_count is None else participant_count
    if len(masked) < n:
        raise IncompleteSetError(set(), f"expected {n} masked values, got {len(masked)}")
    if len(masked) > n:
        raise ProtocolError(f"expected {n} masked values, got {len(masked)}")
    if n == 0:
        raise IncompleteSetError(set(), "no masked values")
    fam = spec.family
    if fam is Family.GM:
        q = spec.gm_modulus
        prod = 1
        for m in masked:
            prod = prod * m.value % q
        return GeoMean(prod, n)
    total = sum(m.value for m in masked) & MASK64
    if fam is Family.SUM:
        return total
    if fam is Family.AM:
        return Mean(Fraction(total, n))
    signed = total - MOD64 if total >> 63 else total
    return qam_inverse(spec, signed / (1 << spec.fixed_point_bits) / n)


def plain_aggregate(spec: AggregationSpec, secrets):
    """The aggregate computed directly on the secrets (test oracle)."""
    secrets = list(secrets)
    fam = spec.family
    if fam is Family.SUM:
        return sum(int(s) for s in secrets) & MASK64
    if fam is Family.AM:
        return Mean(Fraction(sum(int(s) for s in secrets), len(secrets)))
    if fam is Family.GM:
        return GeoMean(math.prod(int(s) for s in secrets), len(secrets))
    return g_mean(spec, secrets)


def aggregate_value(agg) -> float | int:
    """Scalar view of an aggregate for comparisons and reporting."""
    if isinstance(agg, (Mean, GeoMean)):
        return agg.value
    return agg


# batched path: one call masks a whole round

def pair_keys_matrix(ids, key_of) -> np.ndarray:
    """Upper-triangular uint64 key matrix; ``key_of(i, j)`` is called for i < j."""
    n = len(ids)
    out = np.zeros((n, n), dtype=np.uint64)
    for a in range(n):
        for b in range(a + 1, n):
            out[a, b] = key_of(ids[a], ids[b])
    return out


def mask_all(spec: AggregationSpec, ids, secrets, keys: np.ndarray, seq_no: int) -> list[MaskedValue]:
    """Mask every node at once from an id-ordered upper-triangular key matrix.

    Produces exactly what :func:`mask` over :func:`noise_vector` would, for
    every node in ``ids`` with all other ids as peers.
    """
    ids = list(ids)
    n = len(ids)
    if n != len(secrets):
        raise DomainError("one secret per id required")
    if any(ids[k] >= ids[k + 1] for k in range(n - 1)):
        raise DomainError("ids must be strictly increasing")
    enc = [encode_secret(spec, s) for s in secrets]
    if n == 1:
        return [MaskedValue(ids[0], enc[0], seq_no)]
    iu = np.triu_indices(n, 1)
    pk = keys[iu]
    fam = spec.family
    if fam is Family.GM:
        return _mask_all_gm(spec, ids, enc, pk, iu, seq_no)
    with np.errstate(over="ignore"):
        r = rand64_array(pk, seq_no, TAG_NOISE)
        if fam is not Family.SUM:
            r = r + rand64_array(bit_reverse64_array(pk), seq_no, TAG_NOISE)
        noise = np.zeros((n, n), dtype=np.uint64)
        if fam is Family.SUM:
            # smaller id adds r, larger id adds -r
            noise[iu] = r
            noise[iu[1], iu[0]] = np.uint64(0) - r
        else:
            noise[iu] = np.uint64(0) - r
            noise[iu[1], iu[0]] = r
        rows = noise.sum(axis=1, dtype=np.uint64)
    return [MaskedValue(i, (s + int(v)) & MASK64, seq_no) for i, s, v in zip(ids, enc, rows.tolist())]


def _mask_all_gm(spec, ids, enc, pk, iu, seq_no):
    q = spec.gm_modulus
    n = len(ids)
    qq = np.uint64(q)
    r1 = rand64_array(pk, seq_no, TAG_NOISE) % qq
    r2 = rand64_array(bit_reverse64_array(pk), seq_no, TAG_NOISE) % qq
    if r1.all() and r2.all():
        full1 = np.ones((n, n), dtype=np.uint64)
        full2 = np.ones((n, n), dtype=np.uint64)
        full1[iu] = r1
        full1[iu[1], iu[0]] = r1
        full2[iu] = r2
        full2[iu[1], iu[0]] = r2
        rows1, rows2 = full1.tolist(), full2.tolist()
        out = []
        for k, (i, s) in enumerate(zip(ids, enc)):
            below = math.prod(rows1[k][:k]) * math.prod(rows2[k][:k]) % q
            above = math.prod(rows1[k][k + 1:]) * math.prod(rows2[k][k + 1:]) % q
            out.append(MaskedValue(i, s * below % q * mod_inv(above, q) % q, seq_no))
        return out
    # a zero draw needs the per-pair re-draw
    r1l, r2l, pkl = r1.tolist(), r2.tolist(), pk.tolist()
    num = [1] * n  # product of draws from smaller peers
    den = [1] * n  # product of draws from larger peers (inverted at the end)
    for idx, (a, b) in enumerate(zip(iu[0].tolist(), iu[1].tolist())):
        x, y = r1l[idx], r2l[idx]
        if not x:
            x = _gm_draw(pkl[idx], seq_no, q, TAG_NOISE)
        if not y:
            y = _gm_draw(bit_reverse(pkl[idx], 64), seq_no, q, TAG_NOISE)
        r = x * y % q
        den[a] = den[a] * r % q
        num[b] = num[b] * r % q
    return [
        MaskedValue(i, s * num[k] % q * mod_inv(den[k], q) % q, seq_no)
        for k, (i, s) in enumerate(zip(ids, enc))
    ]


def mask_batch(spec: AggregationSpec, secrets: np.ndarray, keys: np.ndarray, seq_nos) -> np.ndarray:
    """Mask ``T`` independent rounds at once (additive families only).

    ``secrets`` is ``(T, n)`` of already-encoded uint64 values, ``keys`` is
    ``(T, n, n)`` with the pair key for ids ``a < b`` at ``[:, a, b]``, and
    ``seq_nos`` has one entry per round.  Row ``t`` equals the values of
    :func:`mask_all` on round ``t`` with ids ``1..n``.
    """
    if not spec.family.additive:
        raise DomainError("mask_batch covers the additive families only")
    secrets = np.asarray(secrets, dtype=np.uint64)
    T, n = secrets.shape
    iu = np.triu_indices(n, 1)
    pk = keys[:, iu[0], iu[1]]
    seq = np.asarray(seq_nos, dtype=np.uint64).reshape(T, 1)
    with np.errstate(over="ignore"):
        r = rand64_array(pk, seq, TAG_NOISE)
        if spec.family is not Family.SUM:
            r = r + rand64_array(bit_reverse64_array(pk), seq, TAG_NOISE)
        up, down = (r, np.uint64(0) - r) if spec.family is Family.SUM else (np.uint64(0) - r, r)
        noise = np.zeros((T, n, n), dtype=np.uint64)
        noise[:, iu[0], iu[1]] = up
        noise[:, iu[1], iu[0]] = down
        return secrets + noise.sum(axis=2, dtype=np.uint64)


def demask_batch(masked: np.ndarray) -> np.ndarray:
    """Row-wise wrapping sum of a ``(T, n)`` masked batch."""
    with np.errstate(over="ignore"):
        return np.asarray(masked, dtype=np.uint64).sum(axis=1, dtype=np.uint64)
