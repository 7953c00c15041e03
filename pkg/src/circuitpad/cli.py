"""Command-line entry points.

Subcommands: ``simulate`` (dataset generation), ``defend`` (apply a padding
strategy to an exported dataset), ``attack`` (train/evaluate classifiers on
a dataset), ``analytic`` (closed-form accuracy/leakage curves), ``experiment
<id>`` (end-to-end canned experiments) and ``game`` (the security game).

Exit codes: 0 on success, 2 on configuration errors, 1 otherwise.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adversary import session_views, count_triplets
from .analytics import accuracy_curve
from .config import ConfigError, load_config, validate_config
from .defenses import apply_strategy
from .experiments import (
    EXPERIMENT_IDS,
    RESULTS_HEADER,
    balanced_session_stream,
    export_feature_csv,
    export_trace_jsonl,
    load_trace_jsonl,
    make_manifest,
    run_experiment,
    security_game,
    _prepare_out,
)
from .traffic import SessionTrace, session_rng


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="circuitpad",
        description="cell-level circuit fingerprinting simulator and evaluation lab",
    )
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML config file")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument(
        "--force", action="store_true", help="allow overwriting existing outputs"
    )
    common.add_argument(
        "--jobs", type=int, default=1, help="worker count for parallel stages"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", parents=[common], help="generate a vanilla dataset")
    p_sim.add_argument(
        "--format",
        choices=["trace-jsonl", "feature-csv"],
        default="trace-jsonl",
        help="export format",
    )

    p_def = sub.add_parser("defend", parents=[common], help="apply the configured defense")
    p_def.add_argument("--dataset", type=Path, required=True, help="input dataset dir")

    p_att = sub.add_parser("attack", parents=[common], help="train/evaluate classifiers")
    p_att.add_argument("--dataset", type=Path, required=True, help="input dataset dir")

    p_ana = sub.add_parser("analytic", parents=[common], help="emit analytic curves")
    p_ana.add_argument(
        "--phi-grid", type=str, default="0,0.25,0.5,1,2,4,8",
        help="comma-separated phi values",
    )
    p_ana.add_argument(
        "--c-grid", type=str, default="0.5,0.7,0.9", help="comma-separated base rates"
    )

    p_exp = sub.add_parser("experiment", parents=[common], help="run a canned experiment")
    p_exp.add_argument("id", choices=EXPERIMENT_IDS, help="experiment identifier")

    p_game = sub.add_parser("game", parents=[common], help="run the security game")
    p_game.add_argument("--trials", type=int, default=None)
    p_game.add_argument("--learning-traces", type=int, default=None)
    p_game.add_argument(
        "--undefended", action="store_true", help="play the game on vanilla traffic"
    )
    return parser


def _load(args) -> "HarnessConfig":
    cfg = load_config(args.config)
    if args.seed is not None:
        raw = dict(cfg.raw)
        raw["seed"] = args.seed
        cfg = validate_config(raw, "<cli>")
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    sessions = [s for _, s in balanced_session_stream(cfg.sim_config())]
    run_id = make_manifest(cfg, args.out, []).run_id
    if args.format == "trace-jsonl":
        files = export_trace_jsonl(sessions, args.out, run_id, force=args.force)
    else:
        files = export_feature_csv(
            sessions, args.out, cfg.raw["adversary"]["max_len"], force=args.force
        )
    manifest = make_manifest(cfg, args.out, files)
    manifest.write(args.out / "manifest.json")
    print(f"wrote {len(sessions)} sessions to {args.out}")
    return 0


def _cmd_defend(args) -> int:
    cfg = _load(args)
    strategy = cfg.strategy_config()
    sessions = load_trace_jsonl(args.dataset)
    padded = []
    for i, loaded in enumerate(sessions):
        session = SessionTrace(
            session_id=loaded.session_id,
            connection_type=loaded.connection_type,
            think_time=loaded.think_time,
            circuits=loaded.circuits,
            site_id=loaded.site_id,
        )
        padded.append(
            apply_strategy(session, strategy, session_rng(cfg.seed, i, lane=1))
        )
    run_id = make_manifest(cfg, args.out, []).run_id
    files = export_trace_jsonl(padded, args.out, run_id, force=args.force)
    manifest = make_manifest(cfg, args.out, files)
    manifest.write(args.out / "manifest.json")
    print(f"defended {len(padded)} sessions with {strategy.kind.value} -> {args.out}")
    return 0


def _cmd_attack(args) -> int:
    from .experiments import (
        ONE_VS_ALL_TASKS,
        PAIRWISE_TASKS,
        CircuitRecord,
        _row,
        run_task,
        split_sessions,
        write_results,
    )
    from .adversary import TraceFeaturizer, to_adversary_view
    from .cells import CircuitPurpose

    cfg = _load(args)
    adv = cfg.raw["adversary"]
    exp_cfg = cfg.raw["experiment"]
    sessions = load_trace_jsonl(args.dataset)
    featurizer = TraceFeaturizer(max_len=adv["max_len"]).fit(None)
    records = []
    for i, sess in enumerate(sessions):
        feats = featurizer.transform([to_adversary_view(c) for c in sess.circuits])
        for circ, row in zip(sess.circuits, feats):
            records.append(
                CircuitRecord(
                    session_index=i,
                    session_id=sess.session_id,
                    site_id=sess.site_id,
                    purpose=circ.purpose,
                    features=row,
                )
            )
    purposes = {r.purpose for r in records}
    tasks = (
        PAIRWISE_TASKS
        if (CircuitPurpose.FAKE_HSDIR in purposes or CircuitPurpose.PADDED_EXIT in purposes)
        else ONE_VS_ALL_TASKS
    )
    manifest_id = make_manifest(cfg, args.out, []).run_id
    scenarios = (
        ["multi-closed", "multi-open"]
        if exp_cfg["scenario"] != "single-site"
        else ["single-site"]
    )
    classifiers = [c for c in adv["classifiers"] if c != "bayes"]
    rows = []
    for scenario in scenarios:
        train_idx, test_idx = split_sessions(
            records, scenario, exp_cfg["train_fraction"], exp_cfg.get("site")
        )
        for task in tasks:
            for clf in classifiers:
                report = run_task(
                    task, records, train_idx, test_idx, clf,
                    adv["tree_max_depth"], adv["tree_min_leaf"], cfg.seed,
                )
                rows.append(
                    _row(
                        "attack", scenario, task.name, clf,
                        None, None, report, cfg.seed, manifest_id,
                    )
                )
    _prepare_out(args.out, args.force, ["results.csv"])
    results = args.out / "results.csv"
    write_results(results, rows)
    manifest = make_manifest(cfg, args.out, [results])
    manifest.write(args.out / "manifest.json")
    print(f"wrote {len(rows)} result rows to {results}")
    return 0


def _cmd_analytic(args) -> int:
    from .analytics import leakage, optimal_accuracy

    cfg = _load(args)
    phis = [float(x) for x in args.phi_grid.split(",") if x]
    cs = [float(x) for x in args.c_grid.split(",") if x]
    _prepare_out(args.out, args.force, ["curves.csv"])
    path = args.out / "curves.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("phi,c,accuracy,leakage\n")
        for phi, c, acc, leak in accuracy_curve(phis, cs):
            fh.write(f"{phi:g},{c:g},{acc:.9f},{leak:.9f}\n")
    manifest = make_manifest(cfg, args.out, [path])
    manifest.write(args.out / "manifest.json")
    print(f"wrote analytic curves to {path}")
    return 0


def _cmd_experiment(args) -> int:
    cfg = _load(args)
    results = run_experiment(cfg, args.id, args.out, force=args.force)
    print(f"experiment {args.id}: results at {results}")
    with open(results, encoding="utf-8") as fh:
        for line in fh:
            print("  " + line.rstrip())
    return 0


def _cmd_game(args) -> int:
    cfg = _load(args)
    outcome = security_game(
        cfg,
        k=args.learning_traces,
        trials=args.trials,
        defended=not args.undefended,
    )
    print(
        f"win rate {outcome['win_rate']:.4f} "
        f"(95% CI {outcome['ci_low']:.4f}-{outcome['ci_high']:.4f}, "
        f"{outcome['trials']} trials, k={outcome['k']})"
    )
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "defend": _cmd_defend,
    "attack": _cmd_attack,
    "analytic": _cmd_analytic,
    "experiment": _cmd_experiment,
    "game": _cmd_game,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
