"""Membership checkers for the n x n cell relation and its 1 x 1 version.

Both relations are relational problems: many answers are correct for one
input, so these functions decide membership and never compute "the" answer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .gf2m import inner_int
from .instances import Instance, InstanceError, InstanceFormatError, is_power_of_two


class AnswerError(ValueError):
    pass


@dataclass(frozen=True)
class PnnAnswer:
    """Either an abstention (``triples is None``) or t_n triples ``(i, j, c)``."""

    triples: tuple[tuple[int, int, int], ...] | None = None

    @classmethod
    def abstain(cls) -> PnnAnswer:
        return cls(None)

    @classmethod
    def of(cls, triples: Sequence[Sequence[int]]) -> PnnAnswer:
        return cls(tuple((int(i), int(j), int(c)) for i, j, c in triples))

    @property
    def abstained(self) -> bool:
        return self.triples is None

    def to_json_obj(self) -> dict:
        if self.triples is None:
            return {"abstain": True}
        return {"triples": [list(t) for t in self.triples]}

    @classmethod
    def from_json_obj(cls, obj) -> PnnAnswer:
        if not isinstance(obj, dict):
            raise InstanceFormatError("answer must be an object")
        if obj.get("abstain") is True:
            return cls.abstain()
        triples = obj.get("triples")
        if not isinstance(triples, list):
            raise InstanceFormatError("expected 'triples' list or 'abstain': true")
        for k, t in enumerate(triples):
            if (not isinstance(t, list) or len(t) != 3
                    or not all(isinstance(v, int) and not isinstance(v, bool) for v in t)):
                raise InstanceFormatError("triple must be three integers", f"triples[{k}]")
        return cls.of(triples)


@dataclass(frozen=True)
class P11Answer:
    c: int
    sigma: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.sigma is not None and sorted(self.sigma) != list(range(len(self.sigma))):
            raise AnswerError("sigma is not a permutation of the universe")

    def to_json_obj(self) -> dict:
        if self.sigma is None:
            return {"c": self.c}
        return {"sigma": list(self.sigma), "c": self.c}

    @classmethod
    def from_json_obj(cls, obj) -> P11Answer:
        if not isinstance(obj, dict) or not isinstance(obj.get("c"), int):
            raise InstanceFormatError("expected {'c': int} with optional 'sigma'")
        sigma = obj.get("sigma")
        return cls(obj["c"], None if sigma is None else tuple(sigma))


def t_n(n: int) -> int:
    """floor(log2 log2 n)."""
    if not is_power_of_two(n) or n < 4:
        raise AnswerError(f"t_n needs a power of two n >= 4, got {n}")
    return (n.bit_length() - 1).bit_length() - 1


def check_pnn(inst: Instance, ans: PnnAnswer) -> bool:
    if ans.triples is None:
        return False
    n, universe = inst.n, inst.universe
    tn = t_n(n)
    if len(ans.triples) != tn:
        raise AnswerError(f"answer has {len(ans.triples)} triples, t_n = {tn}")
    for i, j, c in ans.triples:
        if not (1 <= i <= n and 1 <= j <= n):
            raise AnswerError(f"cell ({i}, {j}) out of range 1..{n}")
        if not 0 <= c < universe:
            raise AnswerError(f"c = {c} outside [0, {universe})")
    cells = [(i, j) for i, j, _ in ans.triples]
    if len(set(cells)) != len(cells):
        return False
    two = inst.two_cell_map
    hits = 0
    for i, j, c in ans.triples:
        ab = two.get((i, j))
        if ab is None:
            continue
        if c == 0 or inner_int(c, ab[0] ^ ab[1]):
            return False
        hits += 1
    # exact rational forms of hits >= t_n/66 and #two-cells < n^2/65
    return 66 * hits >= tn or 65 * len(two) < n * n


def check_p11(x: Sequence[int], y: Sequence[int], ans: P11Answer) -> bool:
    if len(x) != len(y) or len(set(x)) != len(x) or len(set(y)) != len(y):
        raise AnswerError("x and y must be sets of equal size")
    common = sorted(set(x) & set(y))
    if len(common) != 2:
        raise AnswerError(f"|x & y| = {len(common)}, outside the promise |x & y| = 2")
    a, b = common
    if ans.sigma is not None:
        if max(a, b, ans.c) >= len(ans.sigma):
            raise AnswerError("element outside the permuted universe")
        a, b = ans.sigma[a], ans.sigma[b]
    return ans.c != 0 and inner_int(ans.c, a ^ b) == 0


def dumps_answer(ans: PnnAnswer | P11Answer) -> str:
    return json.dumps(ans.to_json_obj(), separators=(",", ":"))


def loads_pnn(data: bytes | str) -> PnnAnswer:
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(exc.msg, f"line {exc.lineno} col {exc.colno}") from exc
    return PnnAnswer.from_json_obj(obj)


__all__ = ["AnswerError", "InstanceError", "P11Answer", "PnnAnswer", "check_p11",
           "check_pnn", "dumps_answer", "loads_pnn", "t_n"]
