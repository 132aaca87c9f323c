"""Command line: ``rsmp {sample,check,run,xcheck,game,report}``.

All randomness flows from ``--seed`` (falling back to ``$RSMP_SEED``, then
0).  Trial ``k`` of a run uses ``stream(seed, k)``, so ``--jobs`` never
changes output bytes.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
breach.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analytic, game, instances, protocol, qsim, relations

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("rsmp")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class InternalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _power_of_two(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not instances.is_power_of_two(n) or n < 2:
        raise argparse.ArgumentTypeError(f"n must be a power of two >= 2, got {n}")
    return n


def _reps(text: str):
    if text in ("auto", "fixed"):
        return text
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("reps must be 'auto', 'fixed' or an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError("reps must be >= 1")
    return value


def _default_seed() -> int:
    env = os.environ.get("RSMP_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"RSMP_SEED must be an integer, got {env!r}") from None


def read_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def load_instance(path: str) -> instances.Instance:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        return instances.deserialize(data)
    except instances.InstanceFormatError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _open_out(path: str | None):
    if path in (None, "-"):
        return sys.stdout, False
    try:
        return open(path, "w", newline=""), True
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


# sample ---------------------------------------------------------------------


def cmd_sample(args) -> int:
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc
    width = max(4, len(str(args.count - 1)))
    for k in range(args.count):
        rng = instances.stream(args.seed, k)
        try:
            if args.promised:
                inst = instances.sample_promised(args.n, rng, args.max_tries)
            else:
                inst = instances.sample_product(args.n, rng)
        except instances.SamplingError as exc:
            raise DataError(str(exc)) from exc
        path = out_dir / f"instance_{k:0{width}d}.json"
        try:
            path.write_bytes(instances.serialize(inst))
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from exc
        print(path)
    return EXIT_OK


# check ----------------------------------------------------------------------


def cmd_check(args) -> int:
    inst = load_instance(args.instance)
    report = instances.check_promises(inst).as_dict()
    if args.answer:
        try:
            ans = relations.loads_pnn(Path(args.answer).read_bytes())
            report["answer_ok"] = relations.check_pnn(inst, ans)
        except OSError as exc:
            raise DataError(f"cannot read {args.answer}: {exc}") from exc
        except (relations.AnswerError, instances.InstanceFormatError) as exc:
            raise DataError(f"{args.answer}: {exc}") from exc
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


# run ------------------------------------------------------------------------


def _resolve_reps(reps, inst: instances.Instance) -> int:
    if reps == "auto":
        return protocol.auto_repetitions(inst)
    if reps == "fixed":
        return protocol.fixed_repetitions(inst.n)
    return int(reps)


def run_trial(inst: instances.Instance, backend: str, R: int, seed: int, trial: int,
              residual: str = "auto") -> dict:
    result = protocol.run_pnn_protocol(inst, R, backend, instances.stream(seed, trial), residual)
    return {
        "n": inst.n,
        "seed": seed,
        "trial": trial,
        "backend": backend,
        "R": result.cost.repetitions,
        "answer": result.answer.to_json_obj(),
        "ok": relations.check_pnn(inst, result.answer),
        "bits": result.cost.classical_bits,
        "epr": result.cost.epr_pairs,
    }


def _run_chunk(payload) -> list[dict]:
    data, backend, R, seed, trials, residual = payload
    inst = instances.deserialize(data)
    return [run_trial(inst, backend, R, seed, t, residual) for t in trials]


def summarize(records: list[dict]) -> dict:
    trials = len(records)
    wins = sum(r["ok"] for r in records)
    lo, hi = game.wilson(wins, trials)
    answered = sum("triples" in r["answer"] for r in records)
    return {
        "trials": trials,
        "successes": wins,
        "success_rate": wins / trials,
        "ci_lo": lo,
        "ci_hi": hi,
        "answer_rate": answered / trials,
        "mean_bits": sum(r["bits"] for r in records) / trials,
        "mean_epr": sum(r["epr"] for r in records) / trials,
    }


def cmd_run(args) -> int:
    inst = load_instance(args.instance)
    if args.backend == "exact":
        qsim.require_exact_size(inst.n)
    if inst.n < 4:
        raise UsageError("the protocol needs n >= 4")
    try:
        R = _resolve_reps(args.reps, inst)
    except protocol.ProtocolError as exc:
        R = None
        log.warning("%s; reporting abstentions", exc)
    if R is None:
        records = [{"n": inst.n, "seed": args.seed, "trial": t, "backend": args.backend, "R": 0,
                    "answer": {"abstain": True}, "ok": False, "bits": 0, "epr": 0}
                   for t in range(args.trials)]
    elif args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        data = instances.serialize(inst)
        chunks = [range(s, args.trials, args.jobs) for s in range(args.jobs)]
        with ProcessPoolExecutor(args.jobs) as pool:
            parts = pool.map(_run_chunk, [(data, args.backend, R, args.seed, c, args.residual)
                                          for c in chunks])
            records = sorted((r for part in parts for r in part), key=lambda r: r["trial"])
    else:
        records = [run_trial(inst, args.backend, R, args.seed, t, args.residual)
                   for t in range(args.trials)]
    out, close = _open_out(args.out)
    try:
        for rec in records:
            out.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if close:
            out.close()
    summary = {"n": inst.n, "backend": args.backend, "R": R or 0, "seed": args.seed,
               **summarize(records)}
    print(json.dumps(summary, sort_keys=True), file=sys.stdout if close else sys.stderr)
    return EXIT_OK


# xcheck ---------------------------------------------------------------------


def cmd_xcheck(args) -> int:
    qsim.require_exact_size(args.n)
    worst = 0.0
    rows = []
    for k in range(args.instances):
        inst = instances.sample_promised(args.n, instances.stream(args.seed, k), args.max_tries)
        exact = qsim.outcome_distribution_exact(inst)
        approx = analytic.AnalyticSampler(inst).outcome_table()
        if args.perturb:
            # negative-control hook: tilt the analytic table and renormalize
            approx = approx.copy()
            approx.ravel()[np.flatnonzero(approx.ravel())[0]] += args.perturb
            approx /= approx.sum()
        tv = analytic.total_variation(exact, approx)
        worst = max(worst, tv)
        rows.append({"instance": k, "tv": tv, "pass": tv <= args.tolerance})
    passed = worst <= args.tolerance
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    print(json.dumps({"n": args.n, "instances": args.instances, "tolerance": args.tolerance,
                      "max_tv": worst, "pass": passed}, sort_keys=True))
    return EXIT_OK if passed else EXIT_INTERNAL


# game -----------------------------------------------------------------------


def cmd_game(args) -> int:
    if args.n < 4:
        raise UsageError("games need n >= 4")
    try:
        strategy = game.parse_strategy(args.strategy, args.budget)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    g = game.make_game(args.n, args.reps if args.reps != "fixed" else protocol.fixed_repetitions(args.n))
    result = game.estimate_win_rate(g, strategy, args.trials, args.seed, jobs=args.jobs)
    out, close = _open_out(args.out)
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(game.CSV_HEADER)
        writer.writerow(result.csv_row())
    finally:
        if close:
            out.close()
    return EXIT_OK


# report ---------------------------------------------------------------------


REPORT_HEADER = ["n", "backend", "R", "trials", "successes", "success_rate", "ci_lo", "ci_hi",
                 "answer_rate", "mean_bits", "mean_epr"]


def cmd_report(args) -> int:
    groups: dict[tuple, list[dict]] = {}
    for path in args.records:
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (rec["n"], rec["backend"], rec["R"])
                rec["ok"], rec["bits"], rec["epr"], rec["answer"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: not a trial record ({exc})") from exc
            groups.setdefault(key, []).append(rec)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for key in sorted(groups):
        s = summarize(groups[key])
        writer.writerow([*key, s["trials"], s["successes"], f"{s['success_rate']:.6f}",
                         f"{s['ci_lo']:.6f}", f"{s['ci_hi']:.6f}", f"{s['answer_rate']:.6f}",
                         f"{s['mean_bits']:.1f}", f"{s['mean_epr']:.1f}"])
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


# parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rsmp", description="Entangled SMP protocol simulator and game harness.")
    parser.add_argument("--config", help="flat key=value file; explicit flags win")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seeded(p):
        p.add_argument("--seed", type=int, default=None)
        return p

    p = seeded(sub.add_parser("sample", help="write random instances as JSON files"))
    p.add_argument("--n", type=_power_of_two, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--promised", action="store_true")
    p.add_argument("--max-tries", type=int, default=1000)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("check", help="promise report for an instance, optionally judge an answer")
    p.add_argument("instance")
    p.add_argument("--answer")
    p.set_defaults(func=cmd_check)

    p = seeded(sub.add_parser("run", help="run the entangled protocol on an instance"))
    p.add_argument("instance")
    p.add_argument("--backend", choices=protocol.BACKENDS, default="analytic")
    p.add_argument("--reps", type=_reps, default="auto")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--residual", choices=("auto", "exact", "uniform"), default="auto")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="JSONL trial records (default stdout)")
    p.set_defaults(func=cmd_run)

    p = seeded(sub.add_parser("xcheck", help="analytic vs exact total-variation cross-check"))
    p.add_argument("--n", type=_power_of_two, required=True)
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--max-tries", type=int, default=1000)
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_xcheck)

    p = seeded(sub.add_parser("game", help="estimate a strategy's win rate in the game"))
    p.add_argument("--n", type=_power_of_two, required=True)
    p.add_argument("--strategy", default="entangled",
                   help="entangled[:exact] | random_guess | oneway_prefix")
    p.add_argument("--budget", type=int, default=0, help="bits for communicating strategies")
    p.add_argument("--reps", type=_reps, default="auto")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="CSV output (default stdout)")
    p.set_defaults(func=cmd_game)

    p = sub.add_parser("report", help="summarize JSONL trial records as CSV")
    p.add_argument("records", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    config = read_config(known.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for subparser in sub.choices.values():
        defaults = {}
        for action in subparser._actions:
            if action.dest in config:
                raw = config[action.dest]
                if isinstance(action, argparse._StoreTrueAction):
                    defaults[action.dest] = raw.lower() in ("1", "true", "yes", "on")
                elif action.type is not None:
                    try:
                        defaults[action.dest] = action.type(raw)
                    except (argparse.ArgumentTypeError, ValueError) as exc:
                        raise UsageError(f"config {action.dest}: {exc}") from exc
                else:
                    defaults[action.dest] = raw
        # a config value satisfies a required flag
        for action in subparser._actions:
            if action.dest in defaults and action.required:
                action.required = False
        subparser.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "seed", 0) is None:
            args.seed = _default_seed()
        for name in ("count", "trials", "instances", "jobs"):
            if getattr(args, name, 1) < 1:
                raise UsageError(f"--{name} must be >= 1")
        if getattr(args, "budget", 0) < 0:
            raise UsageError("--budget must be >= 0")
        return args.func(args)
    except UsageError as exc:
        print(f"rsmp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (qsim.SizeError, relations.AnswerError) as exc:
        print(f"rsmp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, instances.InstanceError, instances.SamplingError) as exc:
        print(f"rsmp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (qsim.SimulationError, InternalError, AssertionError) as exc:
        print(f"rsmp: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
