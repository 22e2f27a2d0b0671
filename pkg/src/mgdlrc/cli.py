"""``mgdlrc`` command line: generate | train | verify | rollout | plot.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 a hard check failed.
Relative output paths resolve against ``$MGDLRC_OUTPUT_DIR`` when it is set.
A ``--config`` JSON file may hold any option by its long name (dashes or
underscores); options given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import diagnostics
from .evaluation import rollout_summary
from .game import GameError, MarkovGame, generate_random_game
from .plotting import MetricsFormatError, plot_csvs
from .policy import HyperParams
from .trainer import CheckpointError, RunConfig, Trainer, ValidationError
from .weights import WeightSchedule

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_CHECK = 0, 1, 2, 3
OUTPUT_ENV = "MGDLRC_OUTPUT_DIR"

PAPER_GAME = dict(num_players=2, num_states=2, num_actions=2, horizon=2, stay_prob=0.8)
PAPER_SEEDS = list(range(9))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_path(p: str) -> Path:
    path = Path(p)
    base = os.environ.get(OUTPUT_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _eta(text):
    if text == "theoretical":
        return text
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'theoretical' or a positive number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("eta must be positive")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _add_game_flags(p):
    p.add_argument("--preset", choices=["paper"], help="two players, two states, two actions, H=2, stay 0.8")
    p.add_argument("-N", "--num-players", type=_positive_int)
    p.add_argument("-S", "--num-states", type=_positive_int)
    p.add_argument("-A", "--num-actions", type=_positive_int)
    p.add_argument("-H", "--horizon", type=_positive_int)
    p.add_argument("--stay-prob", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mgdlrc", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with option values")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a random game as JSON")
    _add_game_flags(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)

    t = sub.add_parser("train", help="self-play run(s) writing metrics CSV")
    _add_game_flags(t)
    t.add_argument("--game", help="game JSON file instead of the generator")
    t.add_argument("--seed", type=int, action="append", dest="seeds",
                   help="repeatable; the preset defaults to seeds 0..8")
    t.add_argument("-T", "--rounds", type=_positive_int, default=1000)
    t.add_argument("--eta", type=_eta, default="theoretical")
    t.add_argument("--beta", type=float, default=70.0)
    t.add_argument("--baseline", choices=["expected_value", "v_value"], default="expected_value")
    t.add_argument("--lambda-rule", choices=["argmax", "two_case"], default="argmax")
    t.add_argument("--lambda-floor", type=float, default=1e-12)
    t.add_argument("--lambda-cap", type=float, default=1.0)
    t.add_argument("--stride", type=_positive_int, default=1, help="metric row every k rounds")
    t.add_argument("--archive", help="checkpoint JSON with full history (for verify/rollout)")
    t.add_argument("--resume", help="continue from a checkpoint to -T rounds")
    t.add_argument("--jobs", type=_positive_int, default=1)
    t.add_argument("-o", "--output", required=True, help="CSV path; use {seed} for several seeds")

    v = sub.add_parser("verify", help="run the diagnostic suite on an archived run")
    v.add_argument("archive")
    v.add_argument("--quick", action="store_true", help="smaller sample sizes for the suites")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("-o", "--output", help="report path (stdout if absent)")

    r = sub.add_parser("rollout", help="Monte-Carlo returns of the averaged output policy")
    r.add_argument("archive")
    r.add_argument("--episodes", type=int, default=100_000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("-o", "--output", help="summary path (stdout if absent)")

    pl = sub.add_parser("plot", help="SVG chart of mean gap with a std band")
    pl.add_argument("csv", nargs="+")
    pl.add_argument("--linear", action="store_true", help="linear round axis")
    pl.add_argument("--title")
    pl.add_argument("-o", "--output", required=True)
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config``."""
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("command", nargs="?")
    known, _ = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    if not known.config or known.command not in choices:
        return parser.parse_args(argv)
    try:
        cfg = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {known.config}: {exc}")
    if not isinstance(cfg, dict):
        parser.error("config file must hold a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    file_seeds = None
    if known.command == "train" and ("seed" in cfg or "seeds" in cfg):
        s = cfg.pop("seeds", cfg.pop("seed", None))
        file_seeds = s if isinstance(s, list) else [s]
    subparser = choices[known.command]
    dests = {a.dest for a in subparser._actions}
    unknown = sorted(set(cfg) - dests)
    if unknown:
        parser.error(f"unknown config keys: {', '.join(unknown)}")
    for a in subparser._actions:
        if a.dest in cfg:
            a.required = False
    subparser.set_defaults(**cfg)
    args = parser.parse_args(argv)
    if file_seeds is not None and args.seeds is None:
        args.seeds = [int(s) for s in file_seeds]
    return args


def _game_kwargs(args) -> dict:
    kw = dict(PAPER_GAME) if args.preset == "paper" else dict(
        num_players=2, num_states=2, num_actions=2, horizon=2, stay_prob=0.8)
    for key in ("num_players", "num_states", "num_actions", "horizon", "stay_prob"):
        val = getattr(args, key, None)
        if val is not None:
            if args.preset == "paper":
                raise UsageError(f"--{key.replace('_', '-')} conflicts with --preset paper")
            kw[key] = val
    if kw["num_states"] == 1 and getattr(args, "stay_prob", None) is None:
        kw["stay_prob"] = 1.0
    return kw


def cmd_generate(args) -> int:
    game = generate_random_game(seed=args.seed, **_game_kwargs(args))
    out = _out_path(args.output)
    game.save(out)
    print(f"wrote {out}")
    return EXIT_OK


def _train_one(job) -> str:
    config, csv_path, archive, resume = job
    if resume:
        tr = Trainer.load_checkpoint(resume, rounds=config.rounds)
    else:
        tr = Trainer(config)
    result = tr.run()
    result.write_csv(csv_path)
    if archive:
        tr.save_checkpoint(archive)
    rows = result.rows
    return (f"seed {config.seed}: {len(rows)} rows, gap {rows[-1]['gap_raw']:.6g} "
            f"at round {rows[-1]['round']} -> {csv_path}")


def cmd_train(args) -> int:
    seeds = args.seeds or (PAPER_SEEDS if args.preset == "paper" and not args.game else [0])
    if len(set(seeds)) != len(seeds):
        raise UsageError("seeds must be distinct")
    if len(seeds) > 1:
        for name in ("output", "archive", "resume"):
            val = getattr(args, name)
            if val and "{seed}" not in val:
                raise UsageError(f"--{name} needs a {{seed}} placeholder for several seeds")
    if args.game and args.preset:
        raise UsageError("--game and --preset are exclusive")

    game = None
    if args.game:
        try:
            game = MarkovGame.load(args.game)
        except (OSError, json.JSONDecodeError, GameError, KeyError) as exc:
            raise ValidationError(f"cannot load game {args.game}: {exc}") from None
        gen = None
    else:
        gen = _game_kwargs(args)
    dims = game if game is not None else generate_random_game(seed=0, **gen)
    try:
        params = HyperParams.defaults(dims.horizon, dims.num_players, dims.max_actions,
                                      eta=args.eta, beta=args.beta,
                                      baseline_mode=args.baseline, lambda_rule=args.lambda_rule,
                                      lambda_floor=args.lambda_floor, lambda_cap=args.lambda_cap)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None

    jobs = []
    for seed in seeds:
        fill = lambda p: None if p is None else str(_out_path(p.format(seed=seed)))
        config = RunConfig(rounds=args.rounds, params=params, game=game, generator=gen,
                           record_history=bool(args.archive), metric_stride=args.stride,
                           seed=seed)
        resume = None if args.resume is None else args.resume.format(seed=seed)
        jobs.append((config, fill(args.output), fill(args.archive), resume))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            lines = list(pool.map(_train_one, jobs))
    else:
        lines = [_train_one(j) for j in jobs]
    print("\n".join(lines))
    return EXIT_OK


def _load_archive(path):
    try:
        tr = Trainer.load_checkpoint(path)
    except OSError as exc:
        raise ValidationError(f"cannot read archive: {exc}") from None
    res = tr.result()
    if res.history is None or len(res.history) == 0:
        raise ValidationError(f"{path} holds no policy history; train with --archive")
    return res


def _emit(doc, output):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if output:
        _out_path(output).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_verify(args) -> int:
    res = _load_archive(args.archive)
    rep = diagnostics.report(diagnostics.verify(res, quick=args.quick, seed=args.seed))
    _emit(rep, args.output)
    return EXIT_OK if rep["pass"] else EXIT_CHECK


def cmd_rollout(args) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be at least 1")
    res = _load_archive(args.archive)
    sched = WeightSchedule(res.game.horizon, res.params.base_eta)
    value = res.V[:, 0, res.game.initial_state]
    summary = rollout_summary(res.game, res.history.policies(), sched, value,
                              args.episodes, args.seed)
    doc = summary.to_dict()
    doc["rounds"] = len(res.history)
    _emit(doc, args.output)
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        svg = plot_csvs(args.csv, log_x=not args.linear, title=args.title)
    except OSError as exc:
        raise ValidationError(f"cannot read CSV: {exc}") from None
    out = _out_path(args.output)
    out.write_text(svg)
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "verify": cmd_verify,
            "rollout": cmd_rollout, "plot": cmd_plot}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mgdlrc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, CheckpointError, MetricsFormatError, GameError,
            diagnostics.HistoryError) as exc:
        print(f"mgdlrc: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
