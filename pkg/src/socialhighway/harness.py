"""Experiment orchestration: adaptation matrices, transfer schedules,
sensitivity sweeps, and CSV/SVG emission.

Every experiment writes into a timestamped run directory containing the
resolved config, CSV tables (deterministic bytes under a fixed config), and
optional SVG figures.
"""

import copy
import csv
import datetime
import os
from dataclasses import dataclass, field

import numpy as np

from . import analysis, drivers
from .config import Config, dump
from .metrics import (ALL_DOMAINS, DomainPair, adaptation_error,
                      adaptation_matrix_from_metrics, pg_efficiency, pg_safety,
                      run_episodes)
from .qnet import QFunction, load_checkpoint, save_checkpoint
from .training import TrainResult, smoothed_mission_rate, train_marl


def make_run_dir(out_dir, command: str, stamp: str | None = None) -> str:
    stamp = stamp or datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    path = os.path.join(out_dir, f"{command}-{stamp}")
    os.makedirs(path, exist_ok=True)
    return path


def write_resolved_config(cfg: Config, run_dir: str) -> str:
    path = os.path.join(run_dir, "resolved-config.yaml")
    dump(cfg, path)
    return path


def write_csv(path, fieldnames, rows):
    """Deterministic CSV writer (fixed field order, repr floats)."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fieldnames), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in fieldnames})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_matrix_csv(path):
    """Round-trip reader for the matrix CSVs written by emit_matrix."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0][1:]
    labels = [r[0] for r in rows[1:]]
    vals = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return labels, header, vals


def emit_matrix(path, row_labels, col_labels, matrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["train\\test"] + list(col_labels))
        for lab, row in zip(row_labels, np.asarray(matrix)):
            w.writerow([lab] + [repr(float(x)) for x in row])


def heatmap_svg(path, matrix, row_labels, col_labels, title, log_scale=True):
    """Log-scaled heatmap; import is local so headless CSV runs stay light."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.colors import LogNorm

    m = np.asarray(matrix, dtype=float)
    fig, ax = plt.subplots(figsize=(1.2 * m.shape[1] + 2, 1.0 * m.shape[0] + 2))
    norm = None
    if log_scale and np.any(m > 0):
        floor = max(m[m > 0].min() * 0.5, 1e-3)
        norm = LogNorm(vmin=floor, vmax=max(m.max(), floor * 10))
        m = np.clip(m, floor, None)
    im = ax.imshow(m, cmap="viridis", norm=norm)
    ax.set_xticks(range(len(col_labels)), col_labels, rotation=45, ha="right")
    ax.set_yticks(range(len(row_labels)), row_labels)
    ax.set_title(title)
    for r in range(m.shape[0]):
        for c in range(m.shape[1]):
            ax.text(c, r, f"{matrix[r][c]:.1f}", ha="center", va="center",
                    color="w", fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def curves_svg(path, curves: dict, xlabel, ylabel, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    for name, ys in curves.items():
        ax.plot(range(len(ys)), ys, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_outputs(results: dict, run_dir: str, fmt=("csv",)):
    """Write experiment results: CSV always, SVG when requested.

    results maps name -> {"rows": [...], "fields": [...]} for tables or
    -> {"matrix": ..., "row_labels": ..., "col_labels": ...} for matrices.
    Raises before writing anything when results are empty.
    """
    if not results:
        raise ValueError("no results to emit")
    written = []
    for name, payload in results.items():
        if "matrix" in payload:
            path = os.path.join(run_dir, f"{name}.csv")
            emit_matrix(path, payload["row_labels"], payload["col_labels"],
                        payload["matrix"])
            written.append(path)
            if "svg" in fmt:
                spath = os.path.join(run_dir, f"{name}.svg")
                heatmap_svg(spath, payload["matrix"], payload["row_labels"],
                            payload["col_labels"], name,
                            log_scale=payload.get("log_scale", True))
                written.append(spath)
        else:
            path = os.path.join(run_dir, f"{name}.csv")
            write_csv(path, payload["fields"], payload["rows"])
            written.append(path)
            if "svg" in fmt and "curves" in payload:
                spath = os.path.join(run_dir, f"{name}.svg")
                curves_svg(spath, payload["curves"], payload.get("xlabel", "episode"),
                           payload.get("ylabel", ""), name)
                written.append(spath)
    return written


# -- training wrapper ---------------------------------------------------

TRAIN_LOG_FIELDS = ("episode", "return", "crashes", "mission", "epsilon",
                    "loss", "interventions", "distance", "gradient_steps")


def train_policy(cfg: Config, phi: float | None = None, domain: DomainPair | None = None,
                 init_qf: QFunction | None = None, progress=None) -> TrainResult:
    """train_marl under a Config, optionally overriding phi and the domain."""
    scen = copy.deepcopy(cfg.scenario)
    rcfg = copy.deepcopy(cfg.reward)
    if phi is not None:
        rcfg.phi = phi
    if domain is not None:
        scen.kind = domain.scenario
        scen.behavior_mix = domain.mix()
    return train_marl(scen, cfg.learner, rcfg, cfg.safety, seed=cfg.seed,
                      behavior_table=cfg.behavior_table(), init_qf=init_qf,
                      progress=progress)


def eval_policy(cfg: Config, qf: QFunction, domain: DomainPair,
                episodes: int | None = None, phi: float | None = None):
    n = episodes or cfg.harness.eval_episodes
    seeds = [cfg.harness.eval_seed + i for i in range(n)]
    rcfg = copy.deepcopy(cfg.reward)
    if phi is not None:
        rcfg.phi = phi
    return run_episodes(qf, domain, n, seeds, cfg.scenario, rcfg, cfg.safety,
                        cfg.learner, workers=cfg.workers)


# -- experiments --------------------------------------------------------


def parse_domain(label: str) -> DomainPair:
    scenario, _, behavior = label.partition(":")
    d = DomainPair(scenario.strip(), behavior.strip() or "mixed")
    if d.scenario not in ("merge", "exit"):
        raise ValueError(f"unknown scenario in domain {label!r}")
    if d.behavior not in ("mixed", "aggressive", "moderate", "conservative"):
        raise ValueError(f"unknown behavior in domain {label!r}")
    return d


def adaptation_matrix(cfg: Config, train_domains=None, test_domains=None,
                      progress=None) -> dict:
    """Train one policy per row domain, evaluate on every column domain.

    Returns the A_error matrix with the companion C(%) and DT matrices;
    per-cell failures are recorded and the matrix still completes.
    """
    rows = [parse_domain(d) for d in (train_domains or cfg.harness.train_domains)] \
        or list(ALL_DOMAINS)
    cols = [parse_domain(d) for d in (test_domains or cfg.harness.test_domains)] \
        or list(ALL_DOMAINS)
    c_m = np.full((len(rows), len(cols)), np.nan)
    dt_m = np.full((len(rows), len(cols)), np.nan)
    mf_m = np.full((len(rows), len(cols)), np.nan)
    failures = []
    for ri, rd in enumerate(rows):
        try:
            trained = train_policy(cfg, domain=rd)
        except Exception as exc:
            failures.append({"cell": f"row {rd.label()}", "error": str(exc)})
            continue
        for ci, cd in enumerate(cols):
            try:
                agg = eval_policy(cfg, trained.qf, cd)
                c_m[ri, ci] = agg.crash_pct
                dt_m[ri, ci] = agg.mean_distance
                mf_m[ri, ci] = agg.mission_failed_pct
            except Exception as exc:
                failures.append({"cell": f"{rd.label()} -> {cd.label()}",
                                 "error": str(exc)})
            if progress is not None:
                progress(rd, cd, c_m[ri, ci], dt_m[ri, ci])
    ok = ~np.isnan(c_m)
    a_m = np.full_like(c_m, np.nan)
    if ok.any():
        filled_c = np.where(ok, c_m, 0.0)
        filled_dt = np.where(ok, dt_m, 0.0)
        a_full = adaptation_matrix_from_metrics(filled_c, filled_dt)
        a_m[ok] = a_full[ok]
    return {
        "row_labels": [d.label() for d in rows],
        "col_labels": [d.label() for d in cols],
        "a_error": a_m,
        "crash": c_m,
        "distance": dt_m,
        "mission_failed": mf_m,
        "failures": failures,
    }


TRANSFER_REGIMENS = ("T1", "T2", "T3", "T4", "T5", "T6")


def transfer_experiment(cfg: Config, schedule=TRANSFER_REGIMENS, run_dir=None,
                        progress=None) -> dict:
    """The six transfer regimens over merge/exit/drive tasks.

    T1 merge from scratch; T2 drive->merge; T3 exit->merge; T4 exit from
    scratch; T5 drive->exit; T6 merge->exit. "Drive" is the merge world with
    mission rewards zeroed. Warm starts load the source regimen's final
    checkpoint; sources are trained on demand and cached within the call.
    """
    schedule = tuple(schedule)
    unknown = set(schedule) - set(TRANSFER_REGIMENS)
    if unknown:
        raise ValueError(f"unknown transfer regimens: {sorted(unknown)}")
    merge_d = DomainPair("merge", "mixed")
    exit_d = DomainPair("exit", "mixed")
    cache: dict = {}

    def source_episodes(c: Config) -> Config:
        src = copy.deepcopy(c)
        if c.harness.transfer_source_episodes:
            src.learner.episodes = c.harness.transfer_source_episodes
        return src

    def get(kind):
        if kind in cache:
            return cache[kind]
        src_cfg = source_episodes(cfg)
        if kind == "drive":
            drive_cfg = copy.deepcopy(src_cfg)
            drive_cfg.reward.mission_weight = 0.0
            res = train_policy(drive_cfg, domain=merge_d)
        elif kind == "merge":
            res = train_policy(src_cfg, domain=merge_d)
        elif kind == "exit":
            res = train_policy(src_cfg, domain=exit_d)
        else:
            raise ValueError(kind)
        cache[kind] = res
        return res

    plans = {
        "T1": (merge_d, None),
        "T2": (merge_d, "drive"),
        "T3": (merge_d, "exit"),
        "T4": (exit_d, None),
        "T5": (exit_d, "drive"),
        "T6": (exit_d, "merge"),
    }
    out = {}
    for name in schedule:
        domain, source = plans[name]
        init = None
        if source is not None:
            src_res = get(source)
            if run_dir:
                ck = os.path.join(run_dir, f"source-{source}.ckpt")
                if not os.path.exists(ck):
                    save_checkpoint(src_res.qf, ck, cfg.hash())
                init = load_checkpoint(ck)
            else:
                init = copy.deepcopy(src_res.qf)
        if source is None and name in ("T1", "T4") and domain.label() + ":scratch" in cache:
            pass
        res = train_policy(cfg, domain=domain, init_qf=init)
        # reuse scratch runs as transfer sources where the tasks coincide
        if name == "T1":
            cache.setdefault("merge", res)
        if name == "T4":
            cache.setdefault("exit", res)
        out[name] = {
            "log": res.log,
            "smoothed_mission": smoothed_mission_rate(res.log),
            "source": source or "scratch",
            "domain": domain.label(),
        }
        if progress is not None:
            progress(name, res)
    return out


def sensitivity_sweep(cfg: Config, qf_social: QFunction, qf_egoistic: QFunction,
                      points: int | None = None, axes: int | None = None,
                      episodes: int | None = None, progress=None) -> list:
    """PG surfaces over interpolated HV aggressiveness.

    1-D sweeps move the lateral and longitudinal parameters together from
    conservative (0) to aggressive (1); 2-D sweeps vary them independently.
    """
    points = points or cfg.harness.sweep_points
    axes = axes or cfg.harness.sweep_axes
    ts = np.linspace(0.0, 1.0, points)
    grid = [(t, t) for t in ts] if axes == 1 else [(tl, tn) for tl in ts for tn in ts]
    rows = []
    n = episodes or cfg.harness.eval_episodes
    for t_lat, t_lon in grid:
        params = drivers.interpolate_presets(t_lat, t_lon)
        table = dict(cfg.behavior_table())
        table["swept"] = params
        scen = copy.deepcopy(cfg.scenario)
        scen.behavior_mix = {"swept": 1.0}
        scen.mission_behavior = "swept"
        seeds = [cfg.harness.eval_seed + i for i in range(n)]
        domain = DomainPair(scen.kind, "mixed")  # mix overridden below
        agg_s = _run_swept(qf_social, scen, table, cfg, seeds)
        agg_e = _run_swept(qf_egoistic, scen, table, cfg, seeds)
        row = {
            "t_lateral": float(t_lat),
            "t_longitudinal": float(t_lon),
            "C_social": agg_s.crash_pct,
            "C_egoistic": agg_e.crash_pct,
            "DT_social": agg_s.mean_distance,
            "DT_egoistic": agg_e.mean_distance,
            "PG_safety": pg_safety(agg_e.crash_pct, agg_s.crash_pct, n),
            "PG_safety_diff": agg_e.crash_pct - agg_s.crash_pct,
            "PG_efficiency": pg_efficiency(agg_s.mean_distance, agg_e.mean_distance),
        }
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


def _run_swept(qf, scen, table, cfg: Config, seeds):
    from .training import run_episode
    from .world import build_scenario
    from .metrics import aggregate, EpisodeMetrics

    weights = qf.copy_weights()
    lcfg = cfg.learner
    episodes = []
    for s in seeds:
        world = build_scenario(scen.kind, scen.n_avs, scen.n_hvs,
                               scen.behavior_mix, seed=int(s), cfg=scen,
                               behavior_table=table, svo_phi=cfg.reward.phi)
        rng = np.random.default_rng(int(s))
        res = run_episode(world, lambda a: weights, cfg.safety, cfg.reward,
                          lcfg.grid_spec(), lcfg.pool, lcfg.history, rng,
                          mode="test", seed=int(s))
        episodes.append(EpisodeMetrics(
            crashed=res.crashed, mission_failed=res.mission_failed,
            distance_traveled=res.distance, reward_sum=res.reward_sum,
            interventions=res.interventions, seed=int(s)))
    return aggregate(episodes)


def phi_sweep(cfg: Config, progress=None) -> list:
    """Train at each phi on the home domain and score by A_error components."""
    rows = []
    domain = DomainPair(cfg.scenario.kind, "mixed")
    results = []
    for phi in cfg.harness.phi_grid:
        res = train_policy(cfg, phi=phi, domain=domain)
        agg = eval_policy(cfg, res.qf, domain, phi=phi)
        results.append((phi, agg))
        if progress is not None:
            progress(phi, agg)
    dt_max = max(a.mean_distance for _, a in results)
    for phi, agg in results:
        rows.append({
            "phi": float(phi),
            "C_pct": agg.crash_pct,
            "MF_pct": agg.mission_failed_pct,
            "DT_m": agg.mean_distance,
            "A_error": adaptation_error(agg.crash_pct, agg.mean_distance,
                                        max(dt_max, 1e-9)),
        })
    return rows
