"""Dense state-vector simulation of one repetition of the entangled protocol.

The joint state of Alice's and Bob's m-qubit registers is held as an
``N x N`` complex matrix ``psi[t1, t2]`` (``N = 4 n^2``), Alice's basis index
on the rows.  Everything here is deliberately brute force: it is the
reference the closed-form sampler in :mod:`rsmp.analytic` is checked against,
so it uses dense Hadamard matrices and never the character-sum shortcut.

Measurement updates use the square-root Kraus operators of the diagonal POVM
elements (entrywise square roots of the weights).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.linalg import hadamard

from .gf2m import GF2Vec
from .instances import Instance

MAX_EXACT_N = 16


class SimulationError(RuntimeError):
    """Internal invariant breach (norm collapse, impossible branch)."""


class SizeError(ValueError):
    pass


def require_exact_size(n: int) -> None:
    if n > MAX_EXACT_N:
        raise SizeError(f"exact simulation needs n <= {MAX_EXACT_N} (state has 16 n^4 amplitudes); "
                        f"got n={n}, use the analytic backend instead")


@dataclass(frozen=True, eq=False)
class DiagonalPOVM:
    """Commuting POVM ``{E_0, E_1, .., E_k}`` diagonal in the computational basis.

    Weights are kept exactly as integer numerators over the common
    denominator ``alpha``: ``E_i[t] = numer[i, t] / alpha``.
    """

    numer: np.ndarray  # (k + 1, N) int64
    alpha: int

    @property
    def size(self) -> int:
        return self.numer.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return self.numer / self.alpha

    def weight(self, i: int, t: int) -> Fraction:
        return Fraction(int(self.numer[i, t]), self.alpha)

    def is_complete(self) -> bool:
        return bool((self.numer.sum(axis=0) == self.alpha).all()
                    and (self.numer >= 0).all() and (self.numer <= self.alpha).all())


def build_povm(rows: Sequence[Sequence[int]], universe: int) -> DiagonalPOVM:
    k = len(rows)
    if k == 0:
        raise ValueError("need at least one set")
    numer = np.zeros((k + 1, universe), dtype=np.int64)
    for i, s in enumerate(rows, start=1):
        numer[i, list(s)] = 1
    mult = numer[1:].sum(axis=0)
    alpha = max(int(mult.max()), 1)
    numer[0] = alpha - mult
    return DiagonalPOVM(numer, alpha)


def initial_state(n: int) -> np.ndarray:
    universe = 4 * n * n
    psi = np.zeros((universe, universe), dtype=complex)
    psi[np.arange(universe), np.arange(universe)] = 1 / (2 * n)
    return psi


def norm(psi: np.ndarray) -> float:
    return float(np.linalg.norm(psi))


def branch_probabilities(psi: np.ndarray, povm_a: DiagonalPOVM, povm_b: DiagonalPOVM) -> np.ndarray:
    """``P[i, j] = <psi| E_i (x) E_j |psi>`` for every pair of POVM outcomes."""
    dens = np.abs(psi) ** 2
    return povm_a.weights @ dens @ povm_b.weights.T


def apply_branch(psi: np.ndarray, povm_a: DiagonalPOVM, povm_b: DiagonalPOVM,
                 i: int, j: int) -> tuple[float, np.ndarray]:
    """Unnormalized Kraus update for outcome ``(i, j)``; returns (probability, post-state)."""
    ka = np.sqrt(povm_a.weights[i])
    kb = np.sqrt(povm_b.weights[j])
    out = ka[:, None] * psi * kb[None, :]
    p = float(np.vdot(out, out).real)
    if p < 1e-18:
        raise SimulationError(f"branch ({i}, {j}) has zero probability")
    post = out / np.sqrt(p)
    if abs(norm(post) - 1) > 1e-12:
        raise SimulationError("post-measurement state lost normalization")
    return p, post


def measure_povm_pair(psi: np.ndarray, povm_a: DiagonalPOVM, povm_b: DiagonalPOVM,
                      rng: np.random.Generator) -> tuple[int, int, np.ndarray]:
    probs = branch_probabilities(psi, povm_a, povm_b)
    flat = probs.ravel()
    idx = int(rng.choice(flat.size, p=flat / flat.sum()))
    i, j = divmod(idx, probs.shape[1])
    _, post = apply_branch(psi, povm_a, povm_b, i, j)
    return i, j, post


def _hadamard_matrix(universe: int) -> np.ndarray:
    return hadamard(universe).astype(float) / np.sqrt(universe)


def hadamard_all(psi: np.ndarray) -> np.ndarray:
    """H on every qubit of both registers: ``H psi H^T``."""
    h = _hadamard_matrix(psi.shape[0])
    return h @ psi @ h.T


def measure_computational(psi: np.ndarray, rng: np.random.Generator) -> tuple[GF2Vec, GF2Vec]:
    universe = psi.shape[0]
    probs = (np.abs(psi) ** 2).ravel()
    idx = int(rng.choice(probs.size, p=probs / probs.sum()))
    k, l = divmod(idx, universe)
    m = universe.bit_length() - 1
    return GF2Vec(k, m), GF2Vec(l, m)


def run_once(inst: Instance, rng: np.random.Generator) -> tuple[int, int, GF2Vec, GF2Vec]:
    """One full repetition: POVMs, Hadamards, computational measurement."""
    require_exact_size(inst.n)
    povm_a = build_povm(inst.x, inst.universe)
    povm_b = build_povm(inst.y, inst.universe)
    i, j, post = measure_povm_pair(initial_state(inst.n), povm_a, povm_b, rng)
    k, l = measure_computational(hadamard_all(post), rng)
    return i, j, k, l


def branch_kl_distribution(inst: Instance, i: int, j: int) -> tuple[float, np.ndarray]:
    """Branch probability and the conditional ``Pr[k, l | i, j]`` matrix."""
    require_exact_size(inst.n)
    povm_a = build_povm(inst.x, inst.universe)
    povm_b = build_povm(inst.y, inst.universe)
    p, post = apply_branch(initial_state(inst.n), povm_a, povm_b, i, j)
    return p, np.abs(hadamard_all(post)) ** 2


def fold_by_sum(kl: np.ndarray) -> np.ndarray:
    """Aggregate ``Pr[k, l]`` into ``Pr[u]`` with ``u = k xor l``."""
    universe = kl.shape[0]
    k = np.arange(universe)
    return kl[k[:, None], k[:, None] ^ k[None, :]].sum(axis=0)


def outcome_distribution_exact(inst: Instance) -> np.ndarray:
    """Exact ``Pr[i, j, u]`` as an ``(n+1, n+1, N)`` array, by full enumeration."""
    require_exact_size(inst.n)
    povm_a = build_povm(inst.x, inst.universe)
    povm_b = build_povm(inst.y, inst.universe)
    psi = initial_state(inst.n)
    probs = branch_probabilities(psi, povm_a, povm_b)
    size = inst.n + 1
    table = np.zeros((size, size, inst.universe))
    for i in range(size):
        for j in range(size):
            if probs[i, j] < 1e-15:
                continue
            p, post = apply_branch(psi, povm_a, povm_b, i, j)
            table[i, j] = p * fold_by_sum(np.abs(hadamard_all(post)) ** 2)
    total = table.sum()
    if abs(total - 1) > 1e-10:
        raise SimulationError(f"exact table sums to {total}")
    return table


class ExactSampler:
    """Repeated sampling from the dense pipeline of one instance.

    Branch probabilities and each branch's post-Hadamard ``Pr[k, l]`` are
    computed by the brute-force routines above and memoized, so many
    repetitions cost one dense simulation per distinct branch.
    """

    def __init__(self, inst: Instance) -> None:
        require_exact_size(inst.n)
        self.inst = inst
        self.povm_a = build_povm(inst.x, inst.universe)
        self.povm_b = build_povm(inst.y, inst.universe)
        self.psi = initial_state(inst.n)
        probs = branch_probabilities(self.psi, self.povm_a, self.povm_b).ravel()
        self.branch_probs = probs / probs.sum()
        self._kl_cdf: dict[int, np.ndarray] = {}

    def _cdf(self, flat: int) -> np.ndarray:
        cdf = self._kl_cdf.get(flat)
        if cdf is None:
            i, j = divmod(flat, self.inst.n + 1)
            _, post = apply_branch(self.psi, self.povm_a, self.povm_b, i, j)
            cdf = np.cumsum((np.abs(hadamard_all(post)) ** 2).ravel())
            cdf /= cdf[-1]
            self._kl_cdf[flat] = cdf
        return cdf

    def sample(self, rng: np.random.Generator, size: int):
        """``size`` independent repetitions as arrays ``(i, j, k, l)``."""
        flat = rng.choice(self.branch_probs.size, size=size, p=self.branch_probs)
        kl = np.empty(size, dtype=np.int64)
        for b in np.unique(flat):
            sel = np.flatnonzero(flat == b)
            cdf = self._cdf(int(b))
            kl[sel] = np.minimum(np.searchsorted(cdf, rng.random(sel.size), side="right"),
                                 cdf.size - 1)
        i, j = np.divmod(flat, self.inst.n + 1)
        k, l = np.divmod(kl, self.inst.universe)
        return i, j, k, l
