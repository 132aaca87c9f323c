"""Instances of the n x n cell problem, promises and input distributions.

An instance is a pair of n-tuples of n-element subsets of the universe
``[0, 4 n^2)``.  Rows (Alice's sets) and columns (Bob's sets) are indexed
``1..n`` at the public surface; storage is 0-based.

Random streams
--------------
Every sampler takes an explicit :class:`numpy.random.Generator`.  Parallel
work derives per-task generators with :func:`stream`, which mixes the master
seed and the task coordinates through ``numpy.random.SeedSequence``::

    SeedSequence(entropy=master_seed, spawn_key=(task, ...))

so task ``k`` of seed ``s`` always sees the same stream regardless of how the
work is scheduled.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .gf2m import universe_bits


class InstanceError(ValueError):
    """Malformed instance or bad index."""


class InstanceFormatError(InstanceError):
    """Instance file that does not parse; ``where`` names the offending location."""

    def __init__(self, msg: str, where: str = "") -> None:
        self.where = where
        super().__init__(f"{where}: {msg}" if where else msg)


class SamplingError(RuntimeError):
    pass


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def stream(master_seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for task ``keys`` under ``master_seed``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


@dataclass(frozen=True, eq=False)
class Instance:
    n: int
    x: tuple[tuple[int, ...], ...]
    y: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        n = self.n
        if not is_power_of_two(n) or n < 2:
            raise InstanceError(f"n must be a power of two >= 2, got {n}")
        universe = 4 * n * n
        for side, sets in (("x", self.x), ("y", self.y)):
            if len(sets) != n or any(len(s) != n for s in sets):
                raise InstanceError(f"{side} must hold {n} sets of {n} elements")
            arr = np.array(sets, dtype=np.int64)
            if (np.diff(arr, axis=1) <= 0).any():
                raise InstanceError(f"{side} sets must be sorted with distinct elements")
            if arr.min() < 0 or arr.max() >= universe:
                raise InstanceError(f"{side} has elements outside [0, {universe})")
            object.__setattr__(self, f"_{side}_arr", arr)

    @classmethod
    def from_sets(cls, n: int, x: Sequence[Sequence[int]], y: Sequence[Sequence[int]]) -> Instance:
        return cls(n, tuple(tuple(sorted(int(e) for e in s)) for s in x),
                   tuple(tuple(sorted(int(e) for e in s)) for s in y))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.n, self.x, self.y) == (other.n, other.x, other.y)

    def __hash__(self) -> int:
        return hash((self.n, self.x, self.y))

    @property
    def universe(self) -> int:
        return 4 * self.n * self.n

    @property
    def m(self) -> int:
        return universe_bits(self.n)

    @property
    def x_arr(self) -> np.ndarray:
        return self._x_arr

    @property
    def y_arr(self) -> np.ndarray:
        return self._y_arr

    @cached_property
    def mult_x(self) -> np.ndarray:
        """Number of rows containing each universe element."""
        return np.bincount(self.x_arr.ravel(), minlength=self.universe)

    @cached_property
    def mult_y(self) -> np.ndarray:
        return np.bincount(self.y_arr.ravel(), minlength=self.universe)

    @cached_property
    def alpha_x(self) -> int:
        return int(self.mult_x.max())

    @cached_property
    def alpha_y(self) -> int:
        return int(self.mult_y.max())

    @cached_property
    def cell_triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All ``(row, col, element)`` with element in both sets, 0-based, sorted."""
        n = self.n
        yflat = self.y_arr.ravel()
        order = np.argsort(yflat, kind="stable")
        ysorted = yflat[order]
        ycol = (order // n).astype(np.int64)
        xorder = np.argsort(self.x_arr.ravel(), kind="stable")
        xflat = self.x_arr.ravel()[xorder]
        xrow = xorder // n
        lo = np.searchsorted(ysorted, xflat, side="left")
        hi = np.searchsorted(ysorted, xflat, side="right")
        counts = hi - lo
        rows = np.repeat(xrow, counts)
        elems = np.repeat(xflat, counts)
        starts = np.repeat(lo - np.cumsum(counts) + counts, counts)
        cols = ycol[starts + np.arange(counts.sum())] if counts.sum() else np.zeros(0, np.int64)
        key = np.lexsort((elems, cols, rows))
        return rows[key], cols[key], elems[key]

    @cached_property
    def cell_sizes(self) -> np.ndarray:
        """``n x n`` matrix of ``|cell|`` (0-based indices)."""
        rows, cols, _ = self.cell_triples
        n = self.n
        return np.bincount(rows * n + cols, minlength=n * n).reshape(n, n)

    @cached_property
    def two_cell_map(self) -> dict[tuple[int, int], tuple[int, int]]:
        """``(i, j) -> (a, b)`` for every cell of size 2, 1-based keys."""
        rows, cols, elems = self.cell_triples
        sizes = self.cell_sizes[rows, cols]
        sel = np.flatnonzero(sizes == 2)
        out = {}
        for p in range(0, len(sel), 2):
            a, b = sel[p], sel[p + 1]
            out[(int(rows[a]) + 1, int(cols[a]) + 1)] = (int(elems[a]), int(elems[b]))
        return out


def _check_index(inst: Instance, i: int, name: str) -> None:
    if not 1 <= i <= inst.n:
        raise InstanceError(f"{name} index {i} out of range 1..{inst.n}")


def cell(inst: Instance, i: int, j: int) -> tuple[int, ...]:
    """Sorted elements of ``x_i & y_j`` (1-based indices)."""
    _check_index(inst, i, "row")
    _check_index(inst, j, "column")
    return tuple(sorted(set(inst.x[i - 1]) & set(inst.y[j - 1])))


def alpha(rows: Sequence[Sequence[int]], universe: int | None = None) -> int:
    """Largest number of sets sharing one element (0 for an all-empty tuple)."""
    counts = Counter(e for s in rows for e in s)
    if universe is not None and counts and max(counts) >= universe:
        raise InstanceError(f"element outside universe [0, {universe})")
    return max(counts.values(), default=0)


def mult_bound(n: int) -> int:
    """floor(4 sqrt(log2 n)), computed without floating point."""
    return math.isqrt(16 * (n.bit_length() - 1))


@dataclass(frozen=True)
class PromiseReport:
    n: int
    two_cells: int
    max_mult: int
    total_cell_mass: int
    two_cells_ok: bool
    mult_ok: bool
    mass_ok: bool

    @property
    def ok(self) -> bool:
        return self.two_cells_ok and self.mult_ok and self.mass_ok

    def failures(self) -> list[str]:
        return [name for name, good in (("two_cells", self.two_cells_ok),
                                        ("max_mult", self.mult_ok),
                                        ("total_cell_mass", self.mass_ok)) if not good]

    def as_dict(self) -> dict:
        return {"n": self.n, "two_cells": self.two_cells, "max_mult": self.max_mult,
                "total_cell_mass": self.total_cell_mass, "two_cells_ok": self.two_cells_ok,
                "mult_ok": self.mult_ok, "mass_ok": self.mass_ok, "ok": self.ok}


def max_multiplicity(inst: Instance) -> int:
    # an element counts index i once when it lies in x_i, y_i or both
    n = inst.n
    idx = np.repeat(np.arange(n, dtype=np.int64), n)
    codes = np.concatenate([inst.x_arr.ravel() * n + idx, inst.y_arr.ravel() * n + idx])
    return int(np.bincount(np.unique(codes) // n).max())


def check_promises(inst: Instance) -> PromiseReport:
    n = inst.n
    sizes = inst.cell_sizes
    two = int((sizes == 2).sum())
    mass = int(sizes.sum())
    mm = max_multiplicity(inst)
    return PromiseReport(
        n=n,
        two_cells=two,
        max_mult=mm,
        total_cell_mass=mass,
        two_cells_ok=65 * two >= n * n,
        mult_ok=mm <= mult_bound(n),
        mass_ok=mass <= 2 * n * n,
    )


def _random_sets(n: int, rng: np.random.Generator) -> tuple[tuple[int, ...], ...]:
    # i.i.d. draws conditioned on distinctness are uniform over n-subsets;
    # about 1/8 of rows collide and get redrawn
    universe = 4 * n * n
    sets = np.sort(rng.integers(0, universe, size=(n, n)), axis=1)
    bad = np.flatnonzero((np.diff(sets, axis=1) == 0).any(axis=1))
    while bad.size:
        sets[bad] = np.sort(rng.integers(0, universe, size=(bad.size, n)), axis=1)
        bad = bad[(np.diff(sets[bad], axis=1) == 0).any(axis=1)]
    return tuple(map(tuple, sets.tolist()))


def sample_product(n: int, rng: np.random.Generator) -> Instance:
    """Every one of the 2n sets independently uniform among n-subsets."""
    if not is_power_of_two(n) or n < 2:
        raise InstanceError(f"n must be a power of two >= 2, got {n}")
    x = _random_sets(n, rng)
    y = _random_sets(n, rng)
    return Instance(n, x, y)


def sample_promised(n: int, rng: np.random.Generator, max_tries: int = 1000,
                    stats: dict | None = None) -> Instance:
    """Rejection-sample the product distribution until every promise holds.

    ``stats``, when given, receives ``tries`` and per-promise failure counts.
    """
    if max_tries < 1:
        raise ValueError("max_tries must be >= 1")
    fails: Counter[str] = Counter()
    for attempt in range(1, max_tries + 1):
        inst = sample_product(n, rng)
        rep = check_promises(inst)
        if rep.ok:
            if stats is not None:
                stats.update(tries=attempt, failures=dict(fails))
            return inst
        fails.update(rep.failures())
    if stats is not None:
        stats.update(tries=max_tries, failures=dict(fails))
    worst, count = fails.most_common(1)[0]
    raise SamplingError(f"no promised instance at n={n} after {max_tries} tries; "
                        f"most violated promise: {worst} ({count} times)")


def to_json_obj(inst: Instance) -> dict:
    return {"n": inst.n, "x": [list(s) for s in inst.x], "y": [list(s) for s in inst.y]}


def serialize(inst: Instance) -> bytes:
    return (json.dumps(to_json_obj(inst), separators=(",", ":")) + "\n").encode()


def from_json_obj(obj) -> Instance:
    if not isinstance(obj, dict):
        raise InstanceFormatError("top level must be an object")
    for key in ("n", "x", "y"):
        if key not in obj:
            raise InstanceFormatError(f"missing key {key!r}")
    n = obj["n"]
    if isinstance(n, bool) or not isinstance(n, int) or not is_power_of_two(n) or n < 2:
        raise InstanceFormatError(f"n must be a power of two >= 2, got {n!r}", "n")
    universe = 4 * n * n
    sides = {}
    for side in ("x", "y"):
        sets = obj[side]
        if not isinstance(sets, list) or len(sets) != n:
            raise InstanceFormatError(f"expected a list of {n} sets", side)
        for k, s in enumerate(sets):
            where = f"{side}[{k}]"
            if not isinstance(s, list) or len(s) != n:
                raise InstanceFormatError(f"expected {n} elements", where)
            for p, e in enumerate(s):
                if isinstance(e, bool) or not isinstance(e, int) or not 0 <= e < universe:
                    raise InstanceFormatError(f"element {e!r} not an integer in [0, {universe})",
                                              f"{where}[{p}]")
                if p and e == s[p - 1]:
                    raise InstanceFormatError(f"duplicate element {e}", f"{where}[{p}]")
                if p and e < s[p - 1]:
                    raise InstanceFormatError("elements not sorted ascending", f"{where}[{p}]")
        sides[side] = tuple(tuple(s) for s in sets)
    return Instance(n, sides["x"], sides["y"])


def deserialize(data: bytes | str) -> Instance:
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(exc.msg, f"line {exc.lineno} col {exc.colno}") from exc
    return from_json_obj(obj)
