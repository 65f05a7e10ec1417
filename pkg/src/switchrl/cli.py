"""Command-line entry points.

Subcommands: gen-data, train, eval, finetune, sweep-alpha, report.
Relative output paths resolve under $SWITCHRL_OUT_ROOT when it is set.
Training and fine-tuning write into run directories; eval, sweep-alpha
and report only read checkpoints.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from .data import (
    dataset_spread,
    generate_dataset,
    generate_stitch_dataset,
    load_dataset,
    normalized_length_std,
    normalized_return_std,
    save_dataset,
)
from .envs import ENV_IDS, make_env
from .finetune import FinetuneLog
from .nn import ConfigurationError
from .report import aggregate_over_seeds, format_score, markdown_table, svg_line_chart, svg_twin_chart
from .runner import (
    DATASET_TIERS,
    ExperimentConfig,
    load_run_meta,
    reevaluate_run,
    run_finetune_experiment,
    run_offline_experiment,
    run_seed_dirs,
    validate_config_dict,
)
from .switching import EvalReport

OUT_ROOT_VAR = "SWITCHRL_OUT_ROOT"


def _resolve_out(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUT_ROOT_VAR)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def cmd_gen_data(args) -> int:
    if args.tier == "stitch":
        dataset = generate_stitch_dataset(args.env, args.n, args.seed)
    else:
        dataset = generate_dataset(args.env, args.tier, args.n, args.seed)
    out = _resolve_out(args.out)
    save_dataset(dataset, out)
    horizon = make_env(args.env).spec.horizon
    print(f"wrote {dataset.n_transitions} transitions "
          f"({dataset.meta.n_trajectories} trajectories) to {out}")
    print(f"sigma (returns): {normalized_return_std(dataset):.6f}")
    print(f"sigma (lengths): {normalized_length_std(dataset, horizon):.6f}")
    return 0


def _load_config(path: str) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    return raw


def cmd_train(args) -> int:
    raw = _load_config(args.config)
    if args.switch_mode:
        raw.setdefault("switch", {})["mode"] = args.switch_mode
    if args.out_dir:
        raw["out_dir"] = args.out_dir
    if args.seeds:
        raw["seeds"] = [int(s) for s in args.seeds.split(",")]
    errors = validate_config_dict(raw)
    if errors:
        print("config errors:", file=sys.stderr)
        for e in errors:
            print(f"  - {e}", file=sys.stderr)
        return 2
    cfg = ExperimentConfig.from_dict(raw)
    cfg.out_dir = str(_resolve_out(cfg.out_dir))
    out = run_offline_experiment(cfg, echo_config=raw)
    print(f"run directory: {out}")
    for seed, seed_dir in run_seed_dirs(out):
        parts = []
        for selector in ("bc", "rl", "switched"):
            report = EvalReport.from_json((seed_dir / f"eval_{selector}.json").read_text())
            parts.append(f"{selector}={report.mean_normalized:.1f}")
        print(f"  seed {seed}: " + "  ".join(parts))
    return 0


def cmd_eval(args) -> int:
    scores = reevaluate_run(args.run_dir, selector=args.selector, episodes=args.episodes)
    agg = aggregate_over_seeds(scores)
    print(f"{args.selector}: {format_score(agg)} (per seed: "
          + ", ".join(f"{s:.1f}" for s in scores) + ")")
    return 0


def cmd_finetune(args) -> int:
    overrides = {}
    if args.config:
        raw = _load_config(args.config)
        overrides = raw.get("finetune", raw)
    if args.online_steps is not None:
        overrides["online_steps"] = args.online_steps
    run_dir = run_finetune_experiment(args.run_dir, overrides)
    print(f"fine-tuned run: {run_dir}")
    for seed, seed_dir in run_seed_dirs(run_dir):
        log = FinetuneLog.from_csv(seed_dir / "finetune_log.csv")
        first, last = log.records[0], log.records[-1]
        print(f"  seed {seed}: score {first.normalized_score:.1f} -> {last.normalized_score:.1f}, "
              f"bc {first.bc_proportion:.2f} -> {last.bc_proportion:.2f}")
    return 0


def cmd_sweep_alpha(args) -> int:
    alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    if not alphas:
        raise ConfigurationError("alpha sweep needs at least one value")
    rows = []
    for alpha in alphas:
        overrides = {"sensitivity": alpha}
        if args.penalty_cap is not None:
            overrides["penalty_cap"] = args.penalty_cap
        scores = reevaluate_run(args.run_dir, selector="switched",
                                episodes=args.episodes, switch_overrides=overrides)
        agg = aggregate_over_seeds(scores)
        rows.append((alpha, agg))
    table = markdown_table(
        ["alpha", "normalized score"],
        [(f"{a:g}", format_score(agg)) for a, agg in rows],
    )
    print(table, end="")
    if args.out:
        out = _resolve_out(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        payload = {f"{a:g}": {"mean": agg.mean, "ci95": agg.ci95, "per_seed": agg.per_seed}
                   for a, agg in rows}
        out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"wrote {out}")
    return 0


def _offline_scores(run_dir) -> dict:
    scores = {"bc": [], "rl": [], "switched": []}
    for _, seed_dir in run_seed_dirs(run_dir):
        for selector in scores:
            report = EvalReport.from_json((seed_dir / f"eval_{selector}.json").read_text())
            scores[selector].append(report.mean_normalized)
    return scores


def cmd_report(args) -> int:
    run_dirs = [Path(d) for d in args.run_dirs]
    metas = [load_run_meta(d) for d in run_dirs]
    env_ids = {m["env_id"] for m in metas}
    if len(env_ids) > 1:
        raise ConfigurationError(f"refusing to mix env ids in one table: {sorted(env_ids)}")
    out_dir = _resolve_out(args.out) if args.out else run_dirs[0] / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for run_dir, meta in zip(run_dirs, metas):
        scores = _offline_scores(run_dir)
        rows.append((
            run_dir.name,
            meta["dataset"]["tier"],
            format_score(aggregate_over_seeds(scores["bc"])),
            format_score(aggregate_over_seeds(scores["rl"])),
            format_score(aggregate_over_seeds(scores["switched"])),
        ))
    lines = [f"# Results: {env_ids.pop()}", "",
             "Normalized scores, mean ± 95% CI over per-seed episode means.", "",
             markdown_table(["run", "dataset", "BC", "RL", "switched"], rows)]

    for run_dir in run_dirs:
        curves = _finetune_curves(run_dir)
        if curves is None:
            continue
        steps, ret_mean, sigma_mean, bc_mean = curves
        chart = svg_line_chart(
            [("switched return", steps, ret_mean)],
            title=f"{run_dir.name}: online fine-tuning",
            x_label="environment steps", y_label="evaluation return",
        )
        (out_dir / f"{run_dir.name}_finetune_return.svg").write_text(chart)
        twin = svg_twin_chart(
            [("ensemble std", steps, sigma_mean)],
            [("BC proportion", steps, bc_mean)],
            title=f"{run_dir.name}: uncertainty and BC usage",
            x_label="environment steps",
            left_label="ensemble std", right_label="BC proportion",
        )
        (out_dir / f"{run_dir.name}_finetune_diagnostics.svg").write_text(twin)
        lines.append(f"![finetune return]({run_dir.name}_finetune_return.svg)")
        lines.append(f"![diagnostics]({run_dir.name}_finetune_diagnostics.svg)")
        lines.append("")

    report_path = out_dir / "report.md"
    report_path.write_text("\n".join(lines))
    print(f"wrote {report_path}")
    return 0


def _finetune_curves(run_dir):
    logs = []
    for _, seed_dir in run_seed_dirs(run_dir):
        path = seed_dir / "finetune_log.csv"
        if not path.exists():
            return None
        logs.append(FinetuneLog.from_csv(path))
    steps = [r.env_step for r in logs[0].records]
    returns = np.mean([[r.eval_return_mean for r in log.records] for log in logs], axis=0)
    sigmas = np.mean([[r.sigma_q_mean for r in log.records] for log in logs], axis=0)
    bcs = np.mean([[r.bc_proportion for r in log.records] for log in logs], axis=0)
    return steps, list(returns), list(sigmas), list(bcs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="switchrl",
        description="Train, evaluate and fine-tune a policy-switching offline RL agent.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset at a quality tier")
    p.add_argument("--env", required=True, choices=ENV_IDS)
    p.add_argument("--tier", required=True, choices=DATASET_TIERS)
    p.add_argument("--n", type=int, required=True, help="minimum transition count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .jsonl path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="offline training for every seed in the config")
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--switch-mode", choices=("adaptive", "fixed_half"), default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seeds", default=None, help="comma-separated override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate a trained run from its checkpoints")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--selector", choices=("bc", "rl", "switched"), default="switched")
    p.add_argument("--episodes", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("finetune", help="online fine-tuning of a trained run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--config", default=None, help="YAML with a finetune section")
    p.add_argument("--online-steps", type=int, default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("sweep-alpha", help="re-evaluate the switch across sensitivities")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--alphas", required=True, help="comma-separated values")
    p.add_argument("--penalty-cap", type=float, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", default=None, help="optional JSON output path")
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("report", help="summary table and SVG charts for runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default=None, help="output directory (default <run>/report)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
