"""Number theory and keyed deterministic randomness used by every protocol.

The keyed generator is a fixed construction, not a cryptographic PRNG.  The
seed is laid out as 13 bytes::

    key (8 bytes, big-endian) | seq_no (4 bytes, big-endian) | tag (1 byte)

and read back as two words ``w0 = key`` and ``w1 = seq_no << 8 | tag``.  The
output is::

    h = fmix64(w0 ^ IV0)
    h = fmix64(h ^ (w1 * ODD_MUL mod 2**64))
    h = fmix64(h ^ IV1)

where ``fmix64`` is the MurmurHash3 64-bit finalizer.  Every stage is a
bijection of its 64-bit input, so two seeds that differ only in ``key`` or only
in ``(seq_no, tag)`` never collide.  Both endpoints of a pair evaluate the same
function on the same bytes, which is all that noise cancellation needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, NoInverseError

MASK64 = (1 << 64) - 1

_FMIX_C1 = 0xFF51AFD7ED558CCD
_FMIX_C2 = 0xC4CEB9FE1A85EC53
_IV0 = 0x9E3779B97F4A7C15
_IV1 = 0x632BE59BD9B4E019
_ODD_MUL = 0xD6E8FEB86659FD93

# tag values; each consumer draws from its own stream
TAG_NOISE = 0x00
TAG_KEYSTREAM_UP = 0x01
TAG_KEYSTREAM_DOWN = 0x02
TAG_DERIVE = 0x0F
TAG_DH_SECRET = 0x10
TAG_DH_FOLD = 0x11
TAG_PPMP = 0x20
TAG_POLY = 0x30
TAG_SECRETS = 0x40
TAG_LINK = 0x50
TAG_FAILURES = 0x60


def mod_pow(base: int, exp: int, modulus: int) -> int:
    """Return ``base**exp % modulus`` by square-and-multiply.

    Unrolls the recursion ``X^Y = (X^(Y//2))^2`` (times ``X`` when ``Y`` is
    odd) from the most significant bit down, so the work is one squaring per
    exponent bit plus one multiplication per set bit.
    """
    if modulus < 1:
        raise DomainError(f"modulus must be >= 1, got {modulus}")
    if exp < 0 or base < 0:
        raise DomainError("mod_pow takes non-negative base and exponent")
    if modulus == 1:
        return 0
    base %= modulus
    acc = 1
    for bit in bin(exp)[2:]:
        acc = acc * acc % modulus
        if bit == "1":
            acc = acc * base % modulus
    return acc


def mod_inv(a: int, modulus: int) -> int:
    """Inverse of ``a`` modulo ``modulus`` (any modulus where ``a`` is a unit)."""
    if modulus < 2:
        raise DomainError(f"modulus must be >= 2, got {modulus}")
    try:
        return pow(a, -1, modulus)
    except ValueError:
        raise NoInverseError(f"{a} has no inverse modulo {modulus}") from None


def bit_reverse(v: int, width: int = 64) -> int:
    if width < 1:
        raise DomainError("width must be positive")
    if v < 0 or v >> width:
        raise DomainError(f"{v} does not fit in {width} bits")
    return int(format(v, f"0{width}b")[::-1], 2)


@dataclass(frozen=True)
class SeedMaterial:
    key: int
    seq_no: int = 0
    tag: int = 0

    def __post_init__(self):
        if not 0 <= self.key <= MASK64:
            raise DomainError("key must be an unsigned 64-bit value")
        if not 0 <= self.seq_no < 1 << 32:
            raise DomainError("seq_no must be an unsigned 32-bit value")
        if not 0 <= self.tag < 256:
            raise DomainError("tag must fit in one byte")

    def to_bytes(self) -> bytes:
        return self.key.to_bytes(8, "big") + self.seq_no.to_bytes(4, "big") + bytes([self.tag])


def _fmix64(x: int) -> int:
    x ^= x >> 33
    x = x * _FMIX_C1 & MASK64
    x ^= x >> 33
    x = x * _FMIX_C2 & MASK64
    x ^= x >> 33
    return x


def _mix_words(w0: int, w1: int) -> int:
    h = _fmix64(w0 ^ _IV0)
    h = _fmix64(h ^ (w1 * _ODD_MUL & MASK64))
    return _fmix64(h ^ _IV1)


def keyed_rand(seed: SeedMaterial) -> int:
    raw = seed.to_bytes()
    return _mix_words(int.from_bytes(raw[:8], "big"), int.from_bytes(raw[8:], "big"))


def rand64(key: int, seq_no: int = 0, tag: int = 0) -> int:
    """Hot-path form of :func:`keyed_rand` without the dataclass round trip."""
    return _mix_words(key, (seq_no << 8) | tag)


def derive_key(*parts: int) -> int:
    """Fold arbitrary non-negative integers into one 64-bit key."""
    h = 0
    for part in parts:
        part = int(part)
        while True:
            h = rand64(h ^ (part & MASK64), 0, TAG_DERIVE)
            part >>= 64
            if not part:
                break
    return h


# numpy twins, bit-identical to the scalar versions

_U = np.uint64


def _fmix64_array(x):
    x = x ^ (x >> _U(33))
    x = x * _U(_FMIX_C1)
    x = x ^ (x >> _U(33))
    x = x * _U(_FMIX_C2)
    return x ^ (x >> _U(33))


def rand64_array(keys, seq_no=0, tag: int = 0) -> np.ndarray:
    """Vectorised :func:`rand64`; ``seq_no`` may be an array broadcastable to ``keys``."""
    keys = np.asarray(keys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        if np.ndim(seq_no):
            w1 = ((np.asarray(seq_no, dtype=np.uint64) << _U(8)) | _U(tag)) * _U(_ODD_MUL)
        else:
            w1 = _U(((int(seq_no) << 8) | tag) * _ODD_MUL & MASK64)
        h = _fmix64_array(keys ^ _U(_IV0))
        h = _fmix64_array(h ^ w1)
        return _fmix64_array(h ^ _U(_IV1))


_BYTE_REV = np.array([int(format(b, "08b")[::-1], 2) for b in range(256)], dtype=np.uint8)


def bit_reverse64_array(values) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.uint64).byteswap()
    return _BYTE_REV[arr.view(np.uint8)].view(np.uint64).reshape(arr.shape)


# primes and generators

def is_prime(n: int) -> bool:
    from sympy import isprime

    return bool(isprime(n))


def _prime_factors(n: int) -> list[int]:
    from sympy import factorint

    return sorted(factorint(n))


def is_generator(g: int, p: int) -> bool:
    if not 0 < g < p:
        return False
    if p == 2:
        return g == 1
    return all(mod_pow(g, (p - 1) // q, p) != 1 for q in _prime_factors(p - 1))


@lru_cache(maxsize=64)
def find_generator(p: int) -> int:
    """Smallest primitive root modulo the prime ``p``."""
    if p < 2 or not is_prime(p):
        raise DomainError(f"{p} is not prime")
    if p == 2:
        return 1
    factors = _prime_factors(p - 1)
    for g in range(2, p):
        if all(mod_pow(g, (p - 1) // q, p) != 1 for q in factors):
            return g
    raise AssertionError("unreachable: every prime has a primitive root")


def find_generator_mod_p2(p: int) -> int:
    """A generator of the unit group modulo ``p**2`` for an odd prime ``p``."""
    g = find_generator(p)
    if p == 2:
        raise DomainError("unit group mod 4 handled nowhere in this package")
    # a primitive root g mod p lifts to p**2 unless g**(p-1) == 1 mod p**2
    if mod_pow(g, p - 1, p * p) == 1:
        g += p
    return g


@dataclass(frozen=True)
class ModParams:
    p: int
    g: int

    def __post_init__(self):
        if self.p < 3 or not is_prime(self.p):
            raise DomainError(f"p={self.p} must be an odd prime")
        if not 1 < self.g < self.p:
            raise DomainError(f"g={self.g} must lie in (1, p)")
        if not is_generator(self.g, self.p):
            raise DomainError(f"g={self.g} does not generate the group mod {self.p}")

    @classmethod
    def for_prime(cls, p: int) -> "ModParams":
        return cls(p, find_generator(p))


DEFAULT_DH_PRIME = (1 << 31) - 1
