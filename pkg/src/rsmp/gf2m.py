"""Bit vectors over GF(2)^m.

Universe elements are the integers ``0 .. 2**m - 1``; the integer ``a`` is
identified with its standard binary encoding, so ``0`` is the additive
identity.  Scalar helpers work on :class:`GF2Vec`, the ``*_int`` helpers and
:func:`parity` work on plain ints / numpy arrays for the hot loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GF2Error(ValueError):
    """Length mismatch or out-of-range index."""


@dataclass(frozen=True, order=True)
class GF2Vec:
    bits: int
    m: int

    def __post_init__(self) -> None:
        if self.m < 2:
            raise GF2Error(f"vector length must be >= 2, got m={self.m}")
        if not 0 <= self.bits < (1 << self.m):
            raise GF2Error(f"bits {self.bits} do not fit in m={self.m}")

    @classmethod
    def zero(cls, m: int) -> GF2Vec:
        return cls(0, m)

    @classmethod
    def from_str(cls, s: str) -> GF2Vec:
        """Parse a bit string, most significant bit first (``"000101"`` is 5)."""
        if not s or set(s) - {"0", "1"}:
            raise GF2Error(f"not a bit string: {s!r}")
        return cls(int(s, 2), len(s))

    def __str__(self) -> str:
        return format(self.bits, f"0{self.m}b")

    def __add__(self, other: GF2Vec) -> GF2Vec:
        return add(self, other)

    def __int__(self) -> int:
        return self.bits

    def is_zero(self) -> bool:
        return self.bits == 0


def _check_len(u: GF2Vec, v: GF2Vec) -> None:
    if u.m != v.m:
        raise GF2Error(f"length mismatch: {u.m} != {v.m}")


def add(u: GF2Vec, v: GF2Vec) -> GF2Vec:
    _check_len(u, v)
    return GF2Vec(u.bits ^ v.bits, u.m)


def inner(u: GF2Vec, v: GF2Vec) -> int:
    """GF(2) inner product: parity of the bitwise AND."""
    _check_len(u, v)
    return (u.bits & v.bits).bit_count() & 1


def index_to_vec(a: int, m: int) -> GF2Vec:
    if not 0 <= a < (1 << m):
        raise GF2Error(f"index {a} out of range [0, {1 << m})")
    return GF2Vec(a, m)


def vec_to_index(v: GF2Vec) -> int:
    return v.bits


def universe_bits(n: int) -> int:
    """m = log2(4 n^2) for a power-of-two ``n``."""
    if n < 1 or n & (n - 1):
        raise GF2Error(f"n must be a power of two, got {n}")
    return 2 * (n.bit_length() - 1) + 2


def inner_int(u: int, v: int) -> int:
    return (u & v).bit_count() & 1


def parity(a) -> np.ndarray:
    """Elementwise parity of the set bits of a non-negative integer array."""
    return (np.bitwise_count(np.asarray(a, dtype=np.int64)) & 1).astype(np.int64)
