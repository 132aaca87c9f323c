"""Closed-form sampler for one repetition of the entangled protocol.

The shared state, both POVMs and the post-measurement states are diagonal in
the computational basis, which collapses the simulation to two steps:

* The POVM branch ``(i, j)`` has probability
  ``sum_t wA_i[t] wB_j[t] / N``; with integer weight numerators this is an
  exact fraction over ``N * alpha_x * alpha_y``.
* After the Hadamards only ``u = k xor l`` carries information:
  ``Pr[u | i, j]`` is proportional to ``|sum_t c_t (-1)^<u,t>|^2`` where
  ``c_t = sqrt(wA_i[t] wB_j[t])``, and ``k`` is uniform and independent of
  ``u``.

For a branch with small support the character sum only depends on the
linear functional ``u -> (<u, b_1>, .., <u, b_d>)`` for a basis ``b`` of the
span of support differences, so ``u`` is drawn as a ``d``-bit pattern plus a
uniform vector of the annihilator.  Wide supports fall back to a fast
Walsh-Hadamard transform over the whole universe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .gf2m import GF2Vec, parity
from .instances import Instance


@dataclass(frozen=True)
class Outcome:
    """Raw result of one repetition: POVM outcomes and measured bit vectors."""

    i: int
    j: int
    k: GF2Vec
    l: GF2Vec

    @property
    def t(self) -> GF2Vec:
        return self.k + self.l


class BranchError(ValueError):
    pass


def fwht(a: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform along the last axis (length a power of two)."""
    a = np.array(a, dtype=float)
    size = a.shape[-1]
    lead = a.shape[:-1]
    h = 1
    while h < size:
        v = a.reshape(*lead, size // (2 * h), 2, h)
        x, y = v[..., 0, :].copy(), v[..., 1, :]
        v[..., 0, :] += y
        v[..., 1, :] = x - y
        h *= 2
    return a


@dataclass(frozen=True)
class BranchTable:
    """Exact ``Pr[i, j] = numer[i, j] / denom`` for ``i, j`` in ``0..n``."""

    numer: np.ndarray
    denom: int

    @property
    def probs(self) -> np.ndarray:
        return self.numer / self.denom

    def fraction(self, i: int, j: int) -> Fraction:
        return Fraction(int(self.numer[i, j]), self.denom)


def joint_branch_distribution(inst: Instance) -> BranchTable:
    ax, ay = inst.alpha_x, inst.alpha_y
    res_x = ax - inst.mult_x  # residual numerators of E_0 for Alice
    res_y = ay - inst.mult_y
    n = inst.n
    numer = np.zeros((n + 1, n + 1), dtype=np.int64)
    numer[1:, 1:] = inst.cell_sizes
    # over the common denominator N*ax*ay: E_i contributes numerator 1 on x_i,
    # E_0 contributes ax - mult_x(t)
    numer[1:, 0] = res_y[inst.x_arr].sum(axis=1)
    numer[0, 1:] = res_x[inst.y_arr].sum(axis=1)
    numer[0, 0] = int((res_x * res_y).sum())
    denom = inst.universe * ax * ay
    if int(numer.sum()) != denom:
        raise AssertionError("branch table does not sum to one")
    return BranchTable(numer, denom)


def _reduce_basis(diffs: list[int]) -> tuple[list[int], list[int], list[int]]:
    """Reduced echelon basis of span(diffs).

    Returns ``(basis, pivots, coords)`` where ``coords[r]`` is the bitmask of
    basis vectors summing to ``diffs[r]``; pivot bit ``pivots[q]`` is set in
    ``basis[q]`` only.
    """
    basis: list[int] = []
    pivots: list[int] = []
    for d in diffs:
        for b, p in zip(basis, pivots):
            if d >> p & 1:
                d ^= b
        if d:
            p = d.bit_length() - 1
            for q, b in enumerate(basis):
                if b >> p & 1:
                    basis[q] = b ^ d
            basis.append(d)
            pivots.append(p)
    coords = []
    for d in diffs:
        mask = 0
        for q, p in enumerate(pivots):
            if d >> p & 1:
                mask |= 1 << q
        coords.append(mask)
    return basis, pivots, coords


@dataclass
class USampler:
    """Sampler of ``u = k xor l`` for one POVM branch."""

    m: int
    support: np.ndarray
    coef: np.ndarray
    method: str = field(init=False)

    def __post_init__(self) -> None:
        universe = 1 << self.m
        s = len(self.support)
        if s == 0:
            raise BranchError("branch has empty support")
        self.method = "fwht"
        if s <= 4 * self.m:
            t0 = int(self.support[0])
            diffs = [int(t) ^ t0 for t in self.support]
            basis, pivots, coords = _reduce_basis(diffs)
            d = len(basis)
            if (1 << d) * s <= universe * self.m:
                self.method = "span"
                self.basis = np.array(basis, dtype=np.int64)
                self.pivot_bits = np.array([1 << p for p in pivots], dtype=np.int64)
                phi = np.arange(1 << d, dtype=np.int64)
                signs = 1 - 2 * parity(np.array(coords, dtype=np.int64)[:, None] & phi[None, :])
                amp = self.coef @ signs
                w = amp ** 2
                self.pattern_probs = w / w.sum()
                self.dim = d
        if self.method == "fwht":
            f = np.zeros(universe)
            f[self.support] = self.coef
            w = fwht(f) ** 2
            self.u_probs = w / w.sum()
        self._cdf = np.cumsum(self.pattern_probs if self.method == "span" else self.u_probs)
        self._cdf /= self._cdf[-1]

    def distribution(self) -> np.ndarray:
        """Full ``Pr[u]`` over the universe, expanded from the sampler's own tables."""
        if self.method == "fwht":
            return self.u_probs.copy()
        u = np.arange(1 << self.m, dtype=np.int64)
        pattern = np.zeros_like(u)
        for q, b in enumerate(self.basis):
            pattern |= parity(u & b) << q
        return self.pattern_probs[pattern] / (1 << (self.m - self.dim))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = np.searchsorted(self._cdf, rng.random(size), side="right")
        idx = np.minimum(idx, len(self._cdf) - 1).astype(np.int64)
        if self.method == "fwht":
            return idx
        # uniform u0, then fix <u, b_q> = bit q of the pattern via the pivot bits
        u = rng.integers(0, 1 << self.m, size=size, dtype=np.int64)
        for q, (b, g) in enumerate(zip(self.basis, self.pivot_bits)):
            wrong = parity(u & b) ^ ((idx >> q) & 1)
            u ^= wrong * g
        return u


class AnalyticSampler:
    """Per-instance sampler with cached branch table and per-branch u samplers."""

    def __init__(self, inst: Instance) -> None:
        self.inst = inst
        self.table = joint_branch_distribution(inst)
        self._cum = np.cumsum(self.table.numer.ravel())
        self._u: dict[tuple[int, int], USampler] = {}

    def branch_support(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Support and unnormalized amplitudes ``sqrt(numA_i[t] numB_j[t])`` of branch ``(i, j)``."""
        inst = self.inst
        if i and j:
            t = np.array(sorted(set(inst.x[i - 1]) & set(inst.y[j - 1])), dtype=np.int64)
            return t, np.ones(len(t))
        if i:
            t = inst.x_arr[i - 1]
            w = inst.alpha_y - inst.mult_y[t]
        elif j:
            t = inst.y_arr[j - 1]
            w = inst.alpha_x - inst.mult_x[t]
        else:
            t = np.arange(inst.universe, dtype=np.int64)
            w = (inst.alpha_x - inst.mult_x) * (inst.alpha_y - inst.mult_y)
        keep = w > 0
        return t[keep], np.sqrt(w[keep].astype(float))

    def u_sampler(self, i: int, j: int) -> USampler:
        key = (i, j)
        sampler = self._u.get(key)
        if sampler is None:
            if self.table.numer[i, j] == 0:
                raise BranchError(f"branch ({i}, {j}) has probability zero")
            support, coef = self.branch_support(i, j)
            sampler = self._u[key] = USampler(self.inst.m, support, coef)
        return sampler

    def sample_branches(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        draws = rng.integers(0, self.table.denom, size=size, dtype=np.int64)
        flat = np.searchsorted(self._cum, draws, side="right")
        return np.divmod(flat, self.inst.n + 1)

    def sample_u(self, i: int, j: int, rng: np.random.Generator, size: int | None = None):
        out = self.u_sampler(i, j).sample(rng, 1 if size is None else size)
        return int(out[0]) if size is None else out

    def u_distribution(self, i: int, j: int) -> np.ndarray:
        return self.u_sampler(i, j).distribution()

    def outcome_table(self) -> np.ndarray:
        """``Pr[i, j, u]`` as an ``(n+1, n+1, N)`` array (small n only)."""
        size = self.inst.n + 1
        out = np.zeros((size, size, self.inst.universe))
        probs = self.table.probs
        for i in range(size):
            for j in range(size):
                if self.table.numer[i, j]:
                    out[i, j] = probs[i, j] * self.u_distribution(i, j)
        return out

    def run_S(self, rng: np.random.Generator) -> Outcome:
        i, j = (int(v[0]) for v in self.sample_branches(rng, 1))
        u = self.sample_u(i, j, rng)
        k = int(rng.integers(0, self.inst.universe))
        m = self.inst.m
        return Outcome(i, j, GF2Vec(k, m), GF2Vec(k ^ u, m))


def sample_u(inst: Instance, i: int, j: int, rng: np.random.Generator) -> GF2Vec:
    return GF2Vec(AnalyticSampler(inst).sample_u(i, j, rng), inst.m)


def run_S_analytic(inst: Instance, rng: np.random.Generator) -> Outcome:
    return AnalyticSampler(inst).run_S(rng)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
