"""Command-line surface for training, evaluation, and the experiment suite.

Every run writes a timestamped directory under --out-dir containing
resolved-config.yaml plus the command's CSV tables (and SVG figures when
--svg is given). Rerunning any command with its emitted resolved config
reproduces the CSV outputs byte for byte.
"""

import argparse
import os
import sys

import numpy as np

from . import analysis, config as config_mod, drivers
from .harness import (TRAIN_LOG_FIELDS, adaptation_matrix, emit_outputs,
                      eval_policy, make_run_dir, parse_domain, phi_sweep,
                      sensitivity_sweep, train_policy, transfer_experiment,
                      write_csv, write_resolved_config)
from .metrics import ALL_DOMAINS, DomainPair
from .qnet import load_checkpoint, save_checkpoint
from .training import smoothed_mission_rate


def _load_config(args) -> config_mod.Config:
    if args.config:
        cfg = config_mod.load(args.config)
    else:
        cfg = config_mod.Config()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    return cfg


def _start_run(args, command):
    cfg = _load_config(args)
    run_dir = make_run_dir(args.out_dir, command)
    write_resolved_config(cfg, run_dir)
    return cfg, run_dir


def cmd_train(args):
    cfg, run_dir = _start_run(args, "train")
    domain = parse_domain(args.domain) if args.domain else None
    init = load_checkpoint(args.init) if args.init else None

    def progress(row):
        if args.verbose and row["episode"] % 20 == 0:
            print(f"episode {row['episode']:5d} return {row['return']:8.3f} "
                  f"mission {row['mission']} eps {row['epsilon']:.3f}")

    res = train_policy(cfg, phi=args.phi, domain=domain, init_qf=init,
                       progress=progress)
    write_csv(os.path.join(run_dir, "training-log.csv"), TRAIN_LOG_FIELDS, res.log)
    save_checkpoint(res.qf, os.path.join(run_dir, "policy.ckpt"), cfg.hash())
    rate = smoothed_mission_rate(res.log)[-1] if res.log else 0.0
    print(f"trained {len(res.log)} episodes; final smoothed mission rate "
          f"{rate:.3f}; outputs in {run_dir}")
    return 0


def cmd_eval(args):
    cfg, run_dir = _start_run(args, "eval")
    qf = load_checkpoint(args.policy)
    domains = [parse_domain(d) for d in args.domain] if args.domain \
        else [DomainPair(cfg.scenario.kind, "mixed")]
    rows = []
    for d in domains:
        agg = eval_policy(cfg, qf, d, episodes=args.episodes)
        row = {"domain": d.label(), **agg.row()}
        rows.append(row)
        print(f"{d.label():24s} C={agg.crash_pct:6.2f}% MF={agg.mission_failed_pct:6.2f}% "
              f"DT={agg.mean_distance:7.1f} m interventions={agg.mean_interventions:.2f}")
    fields = ("domain", "C_pct", "MF_pct", "DT_m", "reward", "interventions", "episodes")
    write_csv(os.path.join(run_dir, "eval.csv"), fields, rows)
    print(f"outputs in {run_dir}")
    return 0


def cmd_sweep(args):
    cfg, run_dir = _start_run(args, "sweep")
    if args.kind == "phi":
        rows = phi_sweep(cfg)
        fields = ("phi", "C_pct", "MF_pct", "DT_m", "A_error")
        write_csv(os.path.join(run_dir, "phi-sweep.csv"), fields, rows)
        best = min(rows, key=lambda r: r["A_error"])
        print(f"phi* = {best['phi']:.4f} (A_error {best['A_error']:.2f}%)")
    else:
        qf_s = load_checkpoint(args.social)
        qf_e = load_checkpoint(args.egoistic)
        rows = sensitivity_sweep(cfg, qf_s, qf_e, points=args.points,
                                 axes=args.axes, episodes=args.episodes)
        fields = ("t_lateral", "t_longitudinal", "C_social", "C_egoistic",
                  "DT_social", "DT_egoistic", "PG_safety", "PG_safety_diff",
                  "PG_efficiency")
        write_csv(os.path.join(run_dir, "sensitivity.csv"), fields, rows)
        if args.svg:
            from .harness import curves_svg
            curves_svg(os.path.join(run_dir, "sensitivity.svg"),
                       {"PG_safety_diff": [r["PG_safety_diff"] for r in rows],
                        "PG_efficiency": [r["PG_efficiency"] or 0.0 for r in rows]},
                       "grid point", "PG", "altruistic performance gain")
    print(f"outputs in {run_dir}")
    return 0


def cmd_adapt_matrix(args):
    cfg, run_dir = _start_run(args, "adapt-matrix")

    def progress(rd, cd, c, dt):
        print(f"  {rd.label():22s} -> {cd.label():22s} C={c:6.2f}% DT={dt:7.1f}")

    result = adaptation_matrix(cfg, train_domains=args.train or None,
                               test_domains=args.test or None,
                               progress=progress if args.verbose else None)
    payloads = {
        "a-error": {"matrix": result["a_error"], "row_labels": result["row_labels"],
                    "col_labels": result["col_labels"], "log_scale": True},
        "crash": {"matrix": result["crash"], "row_labels": result["row_labels"],
                  "col_labels": result["col_labels"], "log_scale": True},
        "distance": {"matrix": result["distance"], "row_labels": result["row_labels"],
                     "col_labels": result["col_labels"], "log_scale": False},
    }
    emit_outputs(payloads, run_dir, fmt=("csv", "svg") if args.svg else ("csv",))
    if result["failures"]:
        write_csv(os.path.join(run_dir, "failures.csv"), ("cell", "error"),
                  result["failures"])
    print(f"outputs in {run_dir}")
    return 0


def cmd_transfer(args):
    cfg, run_dir = _start_run(args, "transfer")
    schedule = args.regimen or list("T%d" % i for i in range(1, 7))
    out = transfer_experiment(cfg, schedule=schedule, run_dir=run_dir)
    rows = []
    curves = {}
    for name, payload in out.items():
        curves[name] = payload["smoothed_mission"]
        for ep, (row, sm) in enumerate(zip(payload["log"], payload["smoothed_mission"])):
            rows.append({"regimen": name, "domain": payload["domain"],
                         "source": payload["source"], "episode": ep,
                         "return": row["return"], "mission": row["mission"],
                         "smoothed_mission": sm})
    fields = ("regimen", "domain", "source", "episode", "return", "mission",
              "smoothed_mission")
    write_csv(os.path.join(run_dir, "transfer.csv"), fields, rows)
    if args.svg:
        from .harness import curves_svg
        curves_svg(os.path.join(run_dir, "transfer.svg"), curves, "episode",
                   "smoothed mission success", "transfer learning")
    print(f"outputs in {run_dir}")
    return 0


def cmd_classify(args):
    cfg, run_dir = _start_run(args, "classify")
    seeds = range(cfg.harness.classifier_seeds)
    table = cfg.behavior_table()
    if cfg.harness.classifier_thresholds:
        th = analysis.ClassifierThresholds.from_dict(cfg.harness.classifier_thresholds)
    else:
        th = analysis.calibrate_thresholds(table, seeds)
        cfg.harness.classifier_thresholds = th.to_dict()
        write_resolved_config(cfg, run_dir)  # thresholds live in config, not code
    grid = [table[l] for l in drivers.PRESET_LABELS]
    if args.points > 0:
        ts = np.linspace(0.0, 1.0, args.points)
        grid += [drivers.interpolate_presets(t, t) for t in ts]
    rows = analysis.parameter_sweep(grid, th, seeds)
    analysis.write_sweep_csv(rows, os.path.join(run_dir, "behavior-sweep.csv"))
    for r in rows:
        print(f"{r['label_in']:14s} score={r['score']:.4f} -> {r['label']}")
    print(f"thresholds: cons/mod={th.conservative_moderate:.4f} "
          f"mod/agg={th.moderate_aggressive:.4f}")
    print(f"outputs in {run_dir}")
    return 0


def cmd_plot(args):
    cfg, run_dir = _start_run(args, "plot")
    from .harness import heatmap_svg, read_matrix_csv

    for path in args.inputs:
        name = os.path.splitext(os.path.basename(path))[0]
        rows, cols, vals = read_matrix_csv(path)
        out = os.path.join(run_dir, f"{name}.svg")
        heatmap_svg(out, vals, rows, cols, name, log_scale=not args.linear)
        print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="socialhighway",
        description="Mixed-autonomy highway MARL experiment harness",
    )
    ap.add_argument("--config", help="YAML config path")
    ap.add_argument("--seed", type=int, default=None, help="override config seed")
    ap.add_argument("--out-dir", default="runs", help="output root directory")
    ap.add_argument("--workers", type=int, default=None,
                    help="parallel evaluation workers")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a masked altruistic policy")
    p.add_argument("--phi", type=float, default=None, help="override SVO angle")
    p.add_argument("--domain", help="scenario:behavior, e.g. merge:mixed")
    p.add_argument("--init", help="warm-start checkpoint")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on domains")
    p.add_argument("--policy", required=True, help="checkpoint path")
    p.add_argument("--domain", action="append",
                   help="scenario:behavior (repeatable)")
    p.add_argument("--episodes", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="phi sweep or aggressiveness sensitivity")
    p.add_argument("--kind", choices=("phi", "sensitivity"), default="sensitivity")
    p.add_argument("--social", help="AV_S checkpoint (sensitivity)")
    p.add_argument("--egoistic", help="AV_E checkpoint (sensitivity)")
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--axes", type=int, choices=(1, 2), default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("adapt-matrix", help="train/test domain adaptation matrix")
    p.add_argument("--train", action="append", help="row domain (repeatable)")
    p.add_argument("--test", action="append", help="column domain (repeatable)")
    p.add_argument("--svg", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_adapt_matrix)

    p = sub.add_parser("transfer", help="six-regimen transfer schedule")
    p.add_argument("--regimen", action="append",
                   help="subset of T1..T6 (repeatable)")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("classify", help="calibrate and run the behavior classifier")
    p.add_argument("--points", type=int, default=0,
                   help="extra interpolated grid points")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("plot", help="re-render SVG figures from matrix CSVs")
    p.add_argument("inputs", nargs="+", help="matrix CSV paths")
    p.add_argument("--linear", action="store_true", help="linear color scale")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
