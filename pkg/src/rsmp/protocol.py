"""Parallel repetition of the entangled SMP protocol, cost accounting and
classical baselines.

Alice and Bob each run R independent copies of the one-shot protocol and send
the referee their POVM outcome and measured vector for every copy.  The
referee keeps the copies with ``i != 0``, ``j != 0`` and ``t = k xor l != 0``,
removes repeated cells (first occurrence wins), and answers with ``t_n`` of
them picked uniformly; with fewer than ``t_n`` usable copies it abstains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .analytic import AnalyticSampler, Outcome
from .gf2m import GF2Vec
from .instances import Instance
from .qsim import ExactSampler, require_exact_size
from .relations import PnnAnswer, t_n

BACKENDS = ("analytic", "exact")

# residual repetitions (i == 0 or j == 0) are sampled exactly up to this n in
# "auto" mode; above it their u is drawn uniformly since no verdict reads it
EXACT_RESIDUAL_MAX_N = 64


class ProtocolError(ValueError):
    pass


def index_bits(n: int) -> int:
    """Width of a POVM outcome ``0..n`` on the wire."""
    return (n + 1 - 1).bit_length()


@dataclass(frozen=True)
class CostReport:
    classical_bits: int
    epr_pairs: int
    repetitions: int

    @staticmethod
    def expected(n: int, m: int, R: int) -> CostReport:
        return CostReport(2 * R * (index_bits(n) + m), R * m, R)


def field_bits(fields: list[tuple[np.ndarray, int]]) -> np.ndarray:
    """Bits of parallel integer columns, MSB first, row by row.

    ``fields`` is a list of ``(values, width)`` with equally long columns.
    """
    cols = []
    for values, width in fields:
        values = np.atleast_1d(np.asarray(values, dtype=np.int64))
        if values.min(initial=0) < 0 or values.max(initial=0) >> width:
            raise ProtocolError(f"value does not fit in {width} bits")
        raw = np.unpackbits(values.astype(">u8").view(np.uint8).reshape(-1, 8), axis=1)
        cols.append(raw[:, 64 - width:])
    return np.concatenate(cols, axis=1).ravel() if cols else np.zeros(0, np.uint8)


def pack_bits(fields: list[tuple[np.ndarray, int]]) -> tuple[bytes, int]:
    """Packed bytes of :func:`field_bits` and the exact bit count."""
    bits = field_bits(fields)
    return np.packbits(bits).tobytes(), int(bits.size)


def unpack_bits(data: bytes, rows: int, widths: list[int], offset: int = 0) -> list[np.ndarray]:
    row_width = sum(widths)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    bits = bits[offset:offset + rows * row_width]
    if bits.size != rows * row_width:
        raise ProtocolError("message too short")
    table = bits.reshape(rows, row_width).astype(np.int64)
    out, col = [], 0
    for width in widths:
        weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
        out.append(table[:, col:col + width] @ weights)
        col += width
    return out


def encode_party(idx: np.ndarray, vec: np.ndarray, n: int, m: int) -> tuple[bytes, int]:
    """One party's message: ``(outcome, vector)`` for every repetition."""
    return pack_bits([(idx, index_bits(n)), (vec, m)])


def decode_party(data: bytes, R: int, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    idx, vec = unpack_bits(data, R, [index_bits(n), m])
    return idx, vec


def p_usable(inst: Instance) -> Fraction:
    """Exact per-repetition probability of a usable triple on a 2-cell.

    Two-cell branches have ``Pr[i, j] = 2 / (N ax ay)`` and emit ``t = 0``
    with probability ``2^(1-m)``.
    """
    twos = len(inst.two_cell_map)
    half = 1 << (inst.m - 1)
    return Fraction(2 * twos, inst.universe * inst.alpha_x * inst.alpha_y) * Fraction(half - 1, half)


def repetitions_for(p_star: Fraction | float, n: int) -> int:
    """Smallest R with ``R * p_star >= 4 (t_n + 2)``."""
    if p_star <= 0:
        raise ProtocolError("no usable 2-cell triples possible: instance outside the promise")
    target = 4 * (t_n(n) + 2)
    if isinstance(p_star, Fraction):
        return math.ceil(Fraction(target) / p_star)
    return math.ceil(target / p_star)


def auto_repetitions(inst: Instance) -> int:
    return repetitions_for(p_usable(inst), inst.n)


def fixed_repetitions(n: int) -> int:
    """Instance-blind repetition count ``2080 ceil(log2 n) (t_n + 3)``."""
    return 2080 * (n.bit_length() - 1) * (t_n(n) + 3)


def selection_width(R: int, tn: int) -> int:
    """Bits of referee randomness: ``ceil(log2 C(R, t_n))``."""
    return (math.comb(R, tn) - 1).bit_length()


def random_bits(rng: np.random.Generator, width: int) -> int:
    if width == 0:
        return 0
    nbytes = (width + 7) // 8
    return int.from_bytes(rng.bytes(nbytes), "big") >> (8 * nbytes - width)


def unrank_combination(rank: int, pool: int, k: int) -> list[int]:
    """The ``rank``-th k-subset of ``range(pool)`` in lexicographic order."""
    out, x = [], 0
    for pos in range(k):
        while True:
            below = math.comb(pool - x - 1, k - pos - 1)
            if rank < below:
                break
            rank -= below
            x += 1
        out.append(x)
        x += 1
    return out


def usable_outcomes(i: np.ndarray, j: np.ndarray, t: np.ndarray, n: int) -> np.ndarray:
    """Repetition indices the referee can use, one per cell, in repetition order."""
    ok = np.flatnonzero((i != 0) & (j != 0) & (t != 0))
    if ok.size == 0:
        return ok
    cells = i[ok] * (n + 1) + j[ok]
    _, first = np.unique(cells, return_index=True)
    return ok[np.sort(first)]


def referee(i: np.ndarray, j: np.ndarray, t: np.ndarray, n: int, selection: int) -> PnnAnswer:
    """Deterministic referee: ``selection`` picks the t_n-subset of usable triples."""
    tn = t_n(n)
    usable = usable_outcomes(i, j, t, n)
    if usable.size < tn:
        return PnnAnswer.abstain()
    chosen = unrank_combination(selection % math.comb(usable.size, tn), usable.size, tn)
    return PnnAnswer.of([(i[usable[c]], j[usable[c]], t[usable[c]]) for c in chosen])


@dataclass
class Trace:
    """Per-repetition raw results; ``exact_u`` marks repetitions whose ``l`` is exact."""

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    l: np.ndarray
    exact_u: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return self.k ^ self.l

    def __len__(self) -> int:
        return len(self.i)

    def outcome(self, r: int, m: int) -> Outcome:
        return Outcome(int(self.i[r]), int(self.j[r]), GF2Vec(int(self.k[r]), m), GF2Vec(int(self.l[r]), m))


@dataclass
class ProtocolRun:
    answer: PnnAnswer
    cost: CostReport
    trace: Trace
    selection: int
    messages: tuple[bytes, bytes] = field(repr=False, default=(b"", b""))


_SAMPLERS: dict = {}


def sampler_for(inst: Instance, backend: str):
    """Cached per-instance sampler (the last few instances are kept)."""
    key = (id(inst), backend)
    hit = _SAMPLERS.get(key)
    if hit is not None and hit.inst is inst:
        return hit
    if backend == "analytic":
        s = AnalyticSampler(inst)
    elif backend == "exact":
        require_exact_size(inst.n)
        s = ExactSampler(inst)
    else:
        raise ProtocolError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    if len(_SAMPLERS) > 8:
        _SAMPLERS.clear()
    _SAMPLERS[key] = s
    return s


def sample_repetitions(inst: Instance, R: int, backend: str, rng: np.random.Generator,
                       residual: str = "auto") -> Trace:
    """R independent one-shot runs.

    ``residual`` controls repetitions with ``i == 0`` or ``j == 0`` on the
    analytic backend: ``"exact"`` samples their ``u`` from the true law,
    ``"uniform"`` draws it uniformly (the referee discards these repetitions,
    so answers are unaffected), ``"auto"`` is exact for small n.
    """
    sampler = sampler_for(inst, backend)
    if backend == "exact":
        i, j, k, l = sampler.sample(rng, R)
        return Trace(i, j, k, l, np.ones(R, dtype=bool))
    if residual == "auto":
        residual = "exact" if inst.n <= EXACT_RESIDUAL_MAX_N else "uniform"
    if residual not in ("exact", "uniform"):
        raise ProtocolError(f"unknown residual mode {residual!r}")
    i, j = sampler.sample_branches(rng, R)
    k = rng.integers(0, inst.universe, size=R, dtype=np.int64)
    u = np.zeros(R, dtype=np.int64)
    exact = (i != 0) & (j != 0) if residual == "uniform" else np.ones(R, dtype=bool)
    flat = i * (inst.n + 1) + j
    sel_flat = flat[exact]
    for b in np.unique(sel_flat):
        sel = np.flatnonzero(exact & (flat == b))
        bi, bj = divmod(int(b), inst.n + 1)
        u[sel] = sampler.sample_u(bi, bj, rng, sel.size)
    rest = np.flatnonzero(~exact)
    u[rest] = rng.integers(0, inst.universe, size=rest.size, dtype=np.int64)
    return Trace(i, j, k, k ^ u, exact)


def run_pnn_protocol(inst: Instance, R: int | str, backend: str, rng: np.random.Generator,
                     residual: str = "auto") -> ProtocolRun:
    n, m = inst.n, inst.m
    if R == "auto":
        R = auto_repetitions(inst)
    R = int(R)
    if R < t_n(n):
        raise ProtocolError(f"R = {R} < t_n = {t_n(n)}")
    quantum_rng, referee_rng = rng.spawn(2)
    trace = sample_repetitions(inst, R, backend, quantum_rng, residual)
    msg_a, bits_a = encode_party(trace.i, trace.k, n, m)
    msg_b, bits_b = encode_party(trace.j, trace.l, n, m)
    selection = random_bits(referee_rng, selection_width(R, t_n(n)))
    answer = referee(trace.i, trace.j, trace.t, n, selection)
    cost = CostReport(bits_a + bits_b, R * m, R)
    return ProtocolRun(answer, cost, trace, selection, (msg_a, msg_b))


# classical baselines ---------------------------------------------------------


class BudgetExceeded(RuntimeError):
    pass


class Channel:
    """Metered classical channel; refuses any send past the budget."""

    def __init__(self, budget: int | None) -> None:
        self.budget = budget
        self.transcript: list[tuple[str, str]] = []

    @property
    def bits(self) -> int:
        return sum(len(b) for _, b in self.transcript)

    def send(self, sender: str, bits: str) -> str:
        if set(bits) - {"0", "1"}:
            raise ProtocolError("messages are bit strings")
        if self.budget is not None and self.bits + len(bits) > self.budget:
            raise BudgetExceeded(f"{sender} tried to send {len(bits)} bits with "
                                 f"{self.budget - self.bits} of {self.budget} left")
        self.transcript.append((sender, bits))
        return bits


def _random_cells(n: int, count: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    picks = rng.choice(n * n, size=count, replace=False)
    return [(int(c) // n + 1, int(c) % n + 1) for c in picks]


def random_guess(inst: Instance, rng: np.random.Generator) -> PnnAnswer:
    """t_n distinct uniform cells, each with a uniform non-zero witness."""
    n, tn = inst.n, t_n(inst.n)
    cells = _random_cells(n, tn, rng)
    cs = rng.integers(1, inst.universe, size=tn)
    return PnnAnswer.of([(i, j, int(c)) for (i, j), c in zip(cells, cs)])


def _orthogonal_nonzero(s: int, m: int, rng: np.random.Generator) -> int:
    while True:
        c = int(rng.integers(1, 1 << m))
        if (c & s).bit_count() % 2 == 0:
            return c


def oneway_prefix(inst: Instance, k_bits: int, rng: np.random.Generator,
                  channel: Channel | None = None) -> PnnAnswer:
    """Alice streams the first ``(row, element)`` pairs of her input; Bob answers.

    Alice sends as many pairs as fit in ``k_bits`` (row-major, rows in order,
    elements ascending).  Bob only trusts rows he received completely: on
    those he knows every cell exactly.  He answers when one of them is a
    2-cell, padding with other exactly known cells, and abstains otherwise.
    """
    if k_bits < 0:
        raise ProtocolError("k_bits must be >= 0")
    n, m, tn = inst.n, inst.m, t_n(inst.n)
    channel = channel or Channel(k_bits)
    row_w = (n - 1).bit_length()
    pairs = k_bits // (m + row_w)
    flat = [(r, e) for r in range(n) for e in inst.x[r]][:pairs]
    if flat:
        bits = "".join(format(r, f"0{row_w}b") + format(e, f"0{m}b") for r, e in flat)
        channel.send("alice", bits)
    # Bob's side: rebuild the rows from the bits on the channel
    received = "".join(b for s, b in channel.transcript if s == "alice")
    rows: dict[int, list[int]] = {}
    for p in range(len(received) // (m + row_w)):
        chunk = received[p * (m + row_w):(p + 1) * (m + row_w)]
        rows.setdefault(int(chunk[:row_w], 2), []).append(int(chunk[row_w:], 2))
    full = {r: set(es) for r, es in rows.items() if len(es) == n}
    two, other = [], []
    for r, xs in sorted(full.items()):
        for c in range(n):
            common = sorted(xs & set(inst.y[c]))
            (two if len(common) == 2 else other).append((r + 1, c + 1, common))
    if not two:
        return PnnAnswer.abstain()
    triples = []
    for i, j, (a, b) in two[:tn]:
        triples.append((i, j, _orthogonal_nonzero(a ^ b, m, rng)))
    for i, j, _ in other[:tn - len(triples)]:
        triples.append((i, j, int(rng.integers(1, inst.universe))))
    if len(triples) < tn:
        return PnnAnswer.abstain()
    return PnnAnswer.of(triples)


def run_classical_baseline(inst: Instance, strategy: str, rng: np.random.Generator,
                           k_bits: int = 0) -> PnnAnswer:
    if strategy == "random_guess":
        return random_guess(inst, rng)
    if strategy == "oneway_prefix":
        return oneway_prefix(inst, k_bits, rng)
    raise ProtocolError(f"unknown classical strategy {strategy!r}")
