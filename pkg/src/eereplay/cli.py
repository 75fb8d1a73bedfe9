"""Command-line entry point: ``eereplay <gen|replay|train|eval|experiment|report>``.

Exit status is 0 on success, 1 on a usage error and 2 when an input file is
missing or malformed.  Diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as exp
from .bandit import make_policy
from .logmodel import LogFormatError, ReplayConfig, read_log, write_log, write_log_file
from .ranker import DEFAULT_LAMBDA, RankerModel, TrainingSet, build_training_set, evaluate_ctr, train
from .replay import replay_log
from .synth import generate_logs, load_model
from .weighting import WeightingScheme

POLICY_CHOICES = ("none", "positions", "scores", "scorepos")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _replay_config(args) -> ReplayConfig:
    try:
        return ReplayConfig(k=args.k, n_logged=args.n_logged, window=args.window,
                            min_score=args.min_score, epsilon=args.epsilon,
                            weight_cap=args.cap, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_log(path):
    try:
        return read_log(path)
    except FileNotFoundError:
        raise DataError(f"log file not found: {path}") from None
    except LogFormatError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON ({exc.msg})") from None


def cmd_gen(args) -> None:
    try:
        model = load_model(args.model)
    except FileNotFoundError:
        raise DataError(f"model file not found: {args.model}") from None
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise DataError(f"{args.model}: bad model config ({exc})") from None
    if args.queries < 0:
        raise UsageError("--queries must be >= 0")
    logs = generate_logs(model, args.queries, args.seed)
    if args.out:
        write_log_file(logs, args.out)
    else:
        sys.stdout.buffer.write(write_log(logs))


def cmd_replay(args) -> None:
    cfg = _replay_config(args)
    logs = _load_log(args.logs)
    scheme = WeightingScheme(args.weighting, args.cap)
    policy = make_policy(args.policy, cfg.k, cfg.n_logged, cfg.epsilon, args.seed, args.score_bins)
    summary = replay_log(logs, cfg, policy, scheme)
    print(f"ctr = {summary.ctr}")
    if args.out:
        Path(args.out).write_text(summary.to_json())
    if args.records:
        with open(args.records, "wb") as fh:
            summary.write_records(fh)
    if args.examples:
        with open(args.examples, "wb") as fh:
            build_training_set(summary).write_jsonl(fh)


def cmd_train(args) -> None:
    try:
        with open(args.examples, "rb") as fh:
            data = TrainingSet.read_jsonl(fh)
    except FileNotFoundError:
        raise DataError(f"examples file not found: {args.examples}") from None
    except ValueError as exc:
        raise DataError(f"{args.examples}: {exc}") from None
    try:
        model = train(data, args.lam)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    text = json.dumps(model.to_dict(), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_eval(args) -> None:
    raw = _load_json(args.model, "model file")
    try:
        model = RankerModel.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{args.model}: bad model ({exc})") from None
    logs = _load_log(args.logs)
    if len(logs) and logs.feature_dim != model.feature_dim:
        raise DataError(f"model expects {model.feature_dim} features, logs have {logs.feature_dim}")
    print(f"ctr = {evaluate_ctr(model, logs, args.k)}")


def cmd_experiment(args) -> None:
    spec_path = Path(args.spec)
    raw = _load_json(spec_path, "experiment spec")
    try:
        spec = exp.ExperimentSpec.from_dict(raw, base=spec_path.parent)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{spec_path}: bad experiment spec ({exc})") from None
    out = Path(args.out)
    try:
        report = exp.run(spec, records_dir=out / "exploration_records")
    except FileNotFoundError as exc:
        raise DataError(f"log file not found: {exc.filename}") from None
    except LogFormatError as exc:
        raise DataError(str(exc)) from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    exp.write_results(report, out)
    for c in report.cells:
        print(f"{c.policy:>12} {c.size:>8}  test_ctr={c.test_ctr_mean:.4f}  lift={c.lift_mean:+.4f}")


def cmd_report(args) -> None:
    src = Path(args.input)
    raw = _load_json(src / "report.json", "report")
    try:
        report = exp.ExperimentReport.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{src / 'report.json'}: bad report ({exc})") from None
    if args.format == "csv":
        sys.stdout.buffer.write(exp.report_csv(report))
    else:
        fig_dir = Path(args.out) if args.out else src / "figures"
        fig_dir.mkdir(parents=True, exist_ok=True)
        for name, data in exp.report_svg(report).items():
            (fig_dir / name).write_bytes(data)
            print(fig_dir / name)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eereplay", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate synthetic logs")
    p.add_argument("--model", required=True)
    p.add_argument("--queries", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("replay", help="replay a log through a policy")
    p.add_argument("--logs", required=True)
    p.add_argument("--policy", choices=POLICY_CHOICES, default="none")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--n-logged", type=int, default=5)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--min-score", type=float, default=0.0)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--weighting", choices=("propensity", "multinomial"), default="multinomial")
    p.add_argument("--cap", type=float, default=10.0)
    p.add_argument("--score-bins", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the replay summary JSON here")
    p.add_argument("--records", help="write exploration records JSONL here")
    p.add_argument("--examples", help="write weighted training examples JSONL here")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("train", help="fit the ranker on training examples")
    p.add_argument("--examples", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test-period CTR of a ranker")
    p.add_argument("--model", required=True)
    p.add_argument("--logs", required=True)
    p.add_argument("--k", type=int, default=2)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the full size x repetition sweep")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="re-render a finished experiment")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=("csv", "svg"), default="csv")
    p.add_argument("--out", help="figure directory for svg (default <in>/figures)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
