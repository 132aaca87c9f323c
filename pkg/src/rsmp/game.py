"""Nonlocality game built from the entangled SMP protocol.

The players' outputs are exactly the protocol's messages: for each of the R
repetitions Alice outputs ``(i, k)`` and Bob ``(j, l)``.  The referee's only
randomness, the choice of which usable triples to report, is drawn by Alice
and appended to her output as a fixed-width field, which leaves a verifier
that is a deterministic function of the instance and the two outputs.

Classical strategies answer in the same format.  Whatever answer they settle
on is embedded by :func:`embed_answer`, so the verifier accepts a classical
pair exactly when the corresponding classical protocol answer is correct.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from .instances import Instance, sample_promised, stream
from .protocol import (
    BudgetExceeded,
    Channel,
    ProtocolError,
    auto_repetitions,
    field_bits,
    index_bits,
    oneway_prefix,
    random_bits,
    random_guess,
    referee,
    sample_repetitions,
    selection_width,
    unpack_bits,
)
from .relations import PnnAnswer, check_pnn, t_n

log = logging.getLogger(__name__)


def _int_bits(value: int, width: int) -> np.ndarray:
    if width == 0:
        return np.zeros(0, np.uint8)
    return np.frombuffer(format(value, f"0{width}b").encode(), dtype=np.uint8) - ord("0")


@dataclass(frozen=True)
class Message:
    data: bytes
    bits: int


@dataclass(frozen=True)
class Game:
    """``R`` is an int or ``"auto"`` (the verifier recomputes it from the instance)."""

    n: int
    R: int | str = "auto"

    def repetitions(self, inst: Instance) -> int:
        return auto_repetitions(inst) if self.R == "auto" else int(self.R)

    def layout(self, inst: Instance) -> tuple[int, int, int]:
        """``(R, bits per repetition, selection bits)``."""
        R = self.repetitions(inst)
        return R, index_bits(self.n) + inst.m, selection_width(R, t_n(self.n))

    def reconstruct(self, inst: Instance, msg_a: Message, msg_b: Message) -> PnnAnswer:
        """The referee's answer implied by the two outputs (abstain on malformed ones)."""
        R, row, sel_w = self.layout(inst)
        if msg_a.bits != R * row + sel_w or msg_b.bits != R * row:
            return PnnAnswer.abstain()
        w, m = index_bits(self.n), inst.m
        i, k = unpack_bits(msg_a.data, R, [w, m])
        j, l = unpack_bits(msg_b.data, R, [w, m])
        if i.max(initial=0) > self.n or j.max(initial=0) > self.n:
            return PnnAnswer.abstain()
        tail = np.unpackbits(np.frombuffer(msg_a.data, dtype=np.uint8))[R * row:R * row + sel_w]
        selection = int("".join(map(str, tail)), 2) if sel_w else 0
        return referee(i, j, k ^ l, self.n, selection)

    def verify(self, inst: Instance, msg_a: Message, msg_b: Message) -> bool:
        if inst.n != self.n:
            raise ValueError(f"game is for n={self.n}, instance has n={inst.n}")
        return check_pnn(inst, self.reconstruct(inst, msg_a, msg_b))


def make_game(n: int, R: int | str = "auto") -> Game:
    if n < 4 or n & (n - 1):
        raise ValueError(f"n must be a power of two >= 4, got {n}")
    return Game(n, R)


def encode_outputs(game: Game, inst: Instance, i, k, j, l, selection: int) -> tuple[Message, Message]:
    R, _, sel_w = game.layout(inst)
    w, m = index_bits(game.n), inst.m
    bits_a = np.concatenate([field_bits([(i, w), (k, m)]), _int_bits(selection, sel_w)])
    bits_b = field_bits([(j, w), (l, m)])
    return (Message(np.packbits(bits_a).tobytes(), int(bits_a.size)),
            Message(np.packbits(bits_b).tobytes(), int(bits_b.size)))


def embed_answer(game: Game, inst: Instance, answer: PnnAnswer) -> tuple[Message, Message]:
    """Outputs under which the verifier reconstructs ``answer``.

    Alice cycles through the rows (repetition r carries row ``r mod n + 1``)
    and never needs to know the answer; Bob activates, for triple q, the
    repetition ``q n + i_q - 1`` with his column and ``l = c``.
    """
    n = game.n
    R = game.repetitions(inst)
    tn = t_n(n)
    if R < n * tn:
        raise ProtocolError(f"R = {R} too small to embed answers (needs >= {n * tn})")
    r = np.arange(R, dtype=np.int64)
    i = r % n + 1
    k = np.zeros(R, dtype=np.int64)
    j = np.zeros(R, dtype=np.int64)
    l = np.zeros(R, dtype=np.int64)
    for q, (ti, tj, c) in enumerate(answer.triples or ()):
        slot = q * n + ti - 1
        j[slot], l[slot] = tj, c
    return encode_outputs(game, inst, i, k, j, l, 0)


@dataclass(frozen=True)
class PlayResult:
    win: bool
    message_bits: int
    comm_bits: int = 0
    forfeit: bool = False


class Strategy:
    name = "strategy"

    def play(self, game: Game, inst: Instance, rng: np.random.Generator) -> PlayResult:
        raise NotImplementedError


@dataclass
class Entangled(Strategy):
    backend: str = "analytic"
    residual: str = "auto"
    name = "entangled"

    def outputs(self, game: Game, inst: Instance, rng: np.random.Generator) -> tuple[Message, Message]:
        # same stream split as run_pnn_protocol: (quantum, selection)
        quantum_rng, selection_rng = rng.spawn(2)
        R, _, sel_w = game.layout(inst)
        trace = sample_repetitions(inst, R, self.backend, quantum_rng, self.residual)
        selection = random_bits(selection_rng, sel_w)
        return encode_outputs(game, inst, trace.i, trace.k, trace.j, trace.l, selection)

    def play(self, game, inst, rng):
        a, b = self.outputs(game, inst, rng)
        return PlayResult(game.verify(inst, a, b), a.bits + b.bits)


@dataclass
class Local(Strategy):
    """No communication; the players share ``rng`` as common randomness."""

    rule: str = "random_guess"
    name = "local"

    def play(self, game, inst, rng):
        if self.rule != "random_guess":
            raise ProtocolError(f"unknown local rule {self.rule!r}")
        a, b = embed_answer(game, inst, random_guess(inst, rng))
        return PlayResult(game.verify(inst, a, b), a.bits + b.bits)


@dataclass
class Communicating(Strategy):
    """Classical players that may talk over a metered channel before answering."""

    rule: str = "oneway_prefix"
    budget_bits: int = 0
    name = "communicating"

    def play(self, game, inst, rng):
        if self.rule != "oneway_prefix":
            raise ProtocolError(f"unknown communicating rule {self.rule!r}")
        channel = Channel(self.budget_bits)
        try:
            answer = oneway_prefix(inst, self.budget_bits, rng, channel)
        except BudgetExceeded as exc:
            log.warning("strategy %s forfeits: %s", self.rule, exc)
            return PlayResult(False, 0, channel.bits, forfeit=True)
        if channel.bits > self.budget_bits:
            raise AssertionError(f"transcript of {channel.bits} bits exceeds budget {self.budget_bits}")
        a, b = embed_answer(game, inst, answer)
        return PlayResult(game.verify(inst, a, b), a.bits + b.bits, channel.bits)


def parse_strategy(spec: str, budget: int = 0) -> Strategy:
    """``entangled[:exact]``, ``random_guess`` or ``oneway_prefix``."""
    name, _, arg = spec.partition(":")
    if name == "entangled":
        return Entangled(backend=arg or "analytic")
    if name == "random_guess":
        return Local("random_guess")
    if name == "oneway_prefix":
        return Communicating("oneway_prefix", budget)
    raise ValueError(f"unknown strategy {spec!r}")


def strategy_label(strategy: Strategy) -> str:
    if isinstance(strategy, Entangled):
        return "entangled" if strategy.backend == "analytic" else f"entangled:{strategy.backend}"
    return strategy.rule


def play(game: Game, strategy: Strategy, inst: Instance, rng: np.random.Generator) -> bool:
    return strategy.play(game, inst, rng).win


def wilson(wins: int, trials: int) -> tuple[float, float]:
    ci = binomtest(wins, trials).proportion_ci(0.95, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class WinRate:
    strategy: str
    n: int
    trials: int
    wins: int
    rate: float
    ci_lo: float
    ci_hi: float
    mean_bits: float
    seed: int

    def csv_row(self) -> list:
        return [self.strategy, self.n, self.trials, self.wins, f"{self.rate:.6f}",
                f"{self.ci_lo:.6f}", f"{self.ci_hi:.6f}", f"{self.mean_bits:.1f}", self.seed]


CSV_HEADER = ["strategy", "n", "trials", "wins", "rate", "ci_lo", "ci_hi", "mean_bits", "seed"]


def play_trial(game: Game, strategy: Strategy, master_seed: int, trial: int) -> PlayResult:
    inst = sample_promised(game.n, stream(master_seed, trial, 0))
    return strategy.play(game, inst, stream(master_seed, trial, 1))


def _play_chunk(args) -> list[PlayResult]:
    game, strategy, seed, trials = args
    return [play_trial(game, strategy, seed, t) for t in trials]


def estimate_win_rate(game: Game, strategy: Strategy, n_trials: int, master_seed: int,
                      jobs: int = 1) -> WinRate:
    """Win rate over fresh promised instances with a 95% Wilson interval."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        chunks = [range(s, n_trials, jobs) for s in range(jobs)]
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_play_chunk, [(game, strategy, master_seed, c) for c in chunks]))
        results = [None] * n_trials
        for c, part in zip(chunks, parts):
            for t, res in zip(c, part):
                results[t] = res
    else:
        results = _play_chunk((game, strategy, master_seed, range(n_trials)))
    wins = sum(r.win for r in results)
    lo, hi = wilson(wins, n_trials)
    mean_bits = sum(r.message_bits + r.comm_bits for r in results) / n_trials
    return WinRate(strategy_label(strategy), game.n, n_trials, wins, wins / n_trials, lo, hi,
                   mean_bits, master_seed)
