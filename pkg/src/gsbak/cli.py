"""Command line front end.

Subcommands: run (experiment grid from a JSON config or named preset),
attack (single attack run against a saved model), report (metrics from a
rows CSV), verify-goldens (fixture regression checks). Exit codes: 0 on
completion, 1 when golden checks fail, 2 on configuration or input errors.
"""

import argparse
import json
import sys

import numpy as np

from .attack import AttackConfig, attack
from .harness import (ConfigError, ExperimentConfig, asr, median_l2,
                      preset_config, read_rows, run_experiment)
from .goldens import verify_goldens
from .models import FixtureMissing, load_model
from .oracle import AttackGoal, top_k


def _load_input(path) -> np.ndarray:
    if str(path).endswith(".npy"):
        return np.load(path).astype(np.float64).ravel()
    with open(path) as fh:
        return np.array(json.load(fh), dtype=np.float64).ravel()


def _cmd_run(args) -> int:
    if args.config:
        config = ExperimentConfig.load(args.config)
    else:
        config = preset_config(args.preset)
    result = run_experiment(config, out_dir=args.out)
    n_rows = len(result["rows"])
    print(f"{config.name}: {n_rows} runs written to {args.out}")
    for rec in result["summary"]:
        r_part = f" r_th={rec['r_th']}" if rec["r_th"] != "" else ""
        print(f"  {rec['metric']} {rec['attack']} {rec['mode']} K={rec['k']} "
              f"Q={rec['q']}{r_part}: {rec['value']:.4g}")
    return 0


def _cmd_attack(args) -> int:
    model = load_model(args.model)
    x = _load_input(args.input)
    if args.mode == "targeted":
        if not args.targets:
            raise ConfigError("targeted mode needs --targets")
        targets = tuple(int(t) for t in args.targets.split(","))
        if len(targets) != args.k:
            raise ConfigError(f"--targets must list exactly {args.k} classes")
        source = tuple(int(s) for s in args.source.split(",")) if args.source else ()
        goal = AttackGoal.targeted(targets, args.k, source_set=source)
    else:
        if args.source:
            source = tuple(int(s) for s in args.source.split(","))
        else:
            source = (int(top_k(model.predict_probs(x), 1)[0]),)
        goal = AttackGoal.untargeted(source, args.k)
    trace = attack(model, x, goal, args.budget, args.seed, AttackConfig())
    if args.out:
        trace.save(args.out)
    status = "failed" if trace.failed else ("success" if trace.success else "no hit")
    line = (f"{status}: queries={trace.total_queries} "
            f"final_norm={trace.final_norm:.6g}")
    if args.rth is not None:
        q_hit = trace.first_success_query(args.rth)
        line += (f" first_query_at_r<={args.rth:g}="
                 f"{q_hit if q_hit is not None else 'never'}")
    print(line)
    return 0


def _cmd_report(args) -> int:
    rows = read_rows(args.rows)
    if not rows:
        raise ConfigError(f"no result rows in {args.rows}")
    keys = sorted({(r.attack, r.mode, r.k) for r in rows})
    for attack_name, mode, k in keys:
        group = [r for r in rows if (r.attack, r.mode, r.k) == (attack_name, mode, k)]
        rate = asr(group, args.q, args.rth)
        med = median_l2(group, args.q)
        print(f"{attack_name} {mode} K={k}: ASR(Q={args.q}, r_th={args.rth:g}) = "
              f"{rate:.4g}, median_l2 = {med:.6g}")
    return 0


def _cmd_verify_goldens(args) -> int:
    results = verify_goldens(args.fixtures)
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += 0 if ok else 1
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsbak",
                                     description="top-K boundary attack toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment grid")
    group = p_run.add_mutually_exclusive_group(required=True)
    group.add_argument("--config", help="JSON experiment config")
    group.add_argument("--preset", help="named built-in config")
    p_run.add_argument("--out", default="results", help="output directory")
    p_run.set_defaults(fn=_cmd_run)

    p_att = sub.add_parser("attack", help="attack one input")
    p_att.add_argument("--model", required=True, help="saved model file")
    p_att.add_argument("--input", required=True, help=".npy or JSON vector")
    p_att.add_argument("--mode", required=True, choices=["untargeted", "targeted"])
    p_att.add_argument("--k", type=int, required=True)
    p_att.add_argument("--targets", help="comma-separated target classes")
    p_att.add_argument("--source", help="comma-separated source classes")
    p_att.add_argument("--budget", type=int, required=True)
    p_att.add_argument("--rth", type=float, help="report first hit at this radius")
    p_att.add_argument("--seed", type=int, default=0)
    p_att.add_argument("--out", help="write the trace JSON here")
    p_att.set_defaults(fn=_cmd_attack)

    p_rep = sub.add_parser("report", help="metrics from a rows CSV")
    p_rep.add_argument("--rows", required=True)
    p_rep.add_argument("--q", type=int, required=True)
    p_rep.add_argument("--rth", type=float, required=True)
    p_rep.set_defaults(fn=_cmd_report)

    p_ver = sub.add_parser("verify-goldens", help="check fixture goldens")
    p_ver.add_argument("--fixtures", help="override fixtures directory")
    p_ver.set_defaults(fn=_cmd_verify_goldens)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FixtureMissing, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
