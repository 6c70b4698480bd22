"""Traffic-graph centralities, style-likelihood estimates, and the
parameter-to-behavior classification pipeline.

Vehicles are graph vertices; edge weights are the shortest travel distance
(longitudinal gap plus a fixed lateral penalty per lane). Closeness tracks
how central a vehicle sits in the flow; cumulative degree counts newly
encountered no-faster vehicles, so it rises while overspeeding. The
magnitudes of the centrality derivatives (SLE) feed a threshold classifier
whose boundaries are calibrated from the three preset behaviors.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import drivers
from .road import straight_road
from .world import World

LANE_GAP_PENALTY = 5.0   # m of travel distance per lane of separation
PROXIMITY_RADIUS = 60.0  # m, neighborhood for the degree centrality


@dataclass
class TrafficGraph:
    """Symmetric travel-distance adjacency over the vehicles present at t."""

    ids: list
    adjacency: np.ndarray
    t: float

    @property
    def n(self):
        return len(self.ids)


def build_traffic_graph(world: World) -> TrafficGraph:
    present = [i for i in range(world.n_vehicles) if not world.departed[i]]
    if not present:
        raise ValueError("no vehicles present")
    n = len(present)
    a = np.zeros((n, n))
    for u in range(n):
        for w in range(u + 1, n):
            i, j = present[u], present[w]
            d = abs(world.x[i] - world.x[j]) + LANE_GAP_PENALTY * abs(int(world.lane[i]) - int(world.lane[j]))
            a[u, w] = d
            a[w, u] = d
    return TrafficGraph(ids=[world.ids[i] for i in present], adjacency=a, t=world.t)


def closeness_centrality(graph: TrafficGraph, k) -> float:
    """(N-1) / sum of distances from vehicle k to every other vertex."""
    if graph.n < 2:
        raise ValueError("closeness needs at least 2 vehicles")
    ki = graph.ids.index(k) if isinstance(k, str) else int(k)
    total = float(graph.adjacency[ki].sum())
    if total <= 0.0:
        return float("inf")
    return (graph.n - 1) / total


class CentralitySeries:
    """Per-vehicle closeness and cumulative degree, sampled per tick."""

    def __init__(self, vehicle_id: str, radius: float = PROXIMITY_RADIUS):
        self.vehicle_id = vehicle_id
        self.radius = radius
        self.times: list = []
        self.closeness: list = []
        self.degree: list = []
        self._seen: set = set()
        self._cd = 0.0

    def update(self, world: World) -> "CentralitySeries":
        """Sample both centralities from the live world (online mode)."""
        graph = build_traffic_graph(world)
        k = graph.ids.index(self.vehicle_id)
        vk = world.v[world.index[self.vehicle_id]]
        newly = 0
        for j, vid in enumerate(graph.ids):
            if vid == self.vehicle_id or vid in self._seen:
                continue
            if graph.adjacency[k, j] <= self.radius:
                # first proximity consumes the pair even if the speed
                # condition fails at that instant
                self._seen.add(vid)
                if world.v[world.index[vid]] <= vk:
                    newly += 1
        self._cd += newly
        self.times.append(world.t)
        self.degree.append(self._cd)
        if graph.n >= 2:
            self.closeness.append(closeness_centrality(graph, self.vehicle_id))
        else:
            self.closeness.append(np.nan)
        return self


def degree_centrality(series: CentralitySeries, world: World) -> CentralitySeries:
    """Advance the cumulative degree series by one world sample."""
    return series.update(world)


@dataclass
class SleResult:
    sle_l: np.ndarray      # |d closeness / dt|
    sle_o: np.ndarray      # |d degree / dt|
    sle_max: tuple         # (max sle_l, max sle_o) over the window


def sle(series, window: float | None = None) -> SleResult:
    """Forward-difference style likelihood estimates of a centrality series.

    Accepts a CentralitySeries or a (times, closeness, degree) triple; the
    optional window restricts the maxima to the trailing `window` seconds.
    """
    if isinstance(series, CentralitySeries):
        times = np.asarray(series.times, dtype=float)
        cc = np.asarray(series.closeness, dtype=float)
        cd = np.asarray(series.degree, dtype=float)
    else:
        times, cc, cd = (np.asarray(a, dtype=float) for a in series)
    if len(times) < 2:
        raise ValueError("need at least 2 samples")
    dt = np.diff(times)
    sle_l = np.abs(np.diff(cc)) / dt
    sle_o = np.abs(np.diff(cd)) / dt
    sel = slice(None)
    if window is not None:
        lo = times[-1] - window
        sel = times[1:] >= lo
    l_vals = sle_l[sel]
    o_vals = sle_o[sel]
    l_max = float(np.nanmax(l_vals)) if l_vals.size else 0.0
    o_max = float(np.nanmax(o_vals)) if o_vals.size else 0.0
    return SleResult(sle_l=sle_l, sle_o=sle_o, sle_max=(l_max, o_max))


def windowed_sle_max(series, window: float = 10.0):
    """Per-window maxima of both SLE series over consecutive windows.

    Returns (window_starts, lmax, omax) arrays; windows tile the sampled
    interval front to back.
    """
    if isinstance(series, CentralitySeries):
        times = np.asarray(series.times, dtype=float)
        cc = np.asarray(series.closeness, dtype=float)
        cd = np.asarray(series.degree, dtype=float)
    else:
        times, cc, cd = (np.asarray(a, dtype=float) for a in series)
    res = sle((times, cc, cd))
    mid = times[1:]
    t0 = times[0]
    starts, lmax, omax = [], [], []
    w = float(window)
    edge = t0
    while edge < times[-1] - 1e-9:
        sel = (mid > edge) & (mid <= edge + w)
        if np.any(sel):
            l_vals = res.sle_l[sel]
            o_vals = res.sle_o[sel]
            starts.append(edge)
            lmax.append(float(np.nanmax(l_vals)))
            omax.append(float(np.nanmax(o_vals)))
        edge += w
    return np.asarray(starts), np.asarray(lmax), np.asarray(omax)


def behavior_features(series, window: float = 10.0) -> tuple:
    """Rollout feature: mean of the per-window SLE maxima, (l, o)."""
    _, lmax, omax = windowed_sle_max(series, window)
    if lmax.size == 0:
        return (0.0, 0.0)
    return (float(np.nanmean(lmax)), float(np.nanmean(omax)))


def aggressiveness_score(sle_max: tuple) -> float:
    """Scalar feature: overspeeding term plus lane-change term."""
    return float(sle_max[0] + sle_max[1])


@dataclass
class ClassifierThresholds:
    """Midpoint boundaries on the aggressiveness score (calibrated)."""

    conservative_moderate: float
    moderate_aggressive: float

    def to_dict(self):
        return {"conservative_moderate": self.conservative_moderate,
                "moderate_aggressive": self.moderate_aggressive}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["conservative_moderate"]), float(d["moderate_aggressive"]))


def classify_behavior(sle_max: tuple, thresholds: ClassifierThresholds) -> str:
    """Threshold rule; boundary values fall to the less aggressive class."""
    s = aggressiveness_score(sle_max)
    if not np.isfinite(s):
        raise ValueError("SLE features must be finite")
    if s <= thresholds.conservative_moderate:
        return drivers.CONSERVATIVE
    if s <= thresholds.moderate_aggressive:
        return drivers.MODERATE
    return drivers.AGGRESSIVE


# -- scripted calibration scenario -------------------------------------


def calibration_rollout(params: drivers.BehaviorParams, seed: int,
                        horizon: float = 100.0, n_pairs: int = 7,
                        subject_speed: float = 24.0) -> CentralitySeries:
    """Drive one subject with `params` through staggered slow traffic pairs.

    Each pair blocks two of the three lanes, so passing requires a lane
    change; the pairs are tight enough that a fast passer brings both
    vehicles into proximity almost at once. Traffic holds its lanes, so the
    subject's centrality series isolates the behavior the parameters
    generate: aggressive bundles weave past every pair, conservative ones
    settle in behind the first.
    """
    rng = np.random.default_rng(seed)
    layout = straight_road(3, 3000.0)
    ids = ["subject"]
    kinds = [0]
    missions = [0]
    lanes = [1]
    xs = [0.0]
    vs = [subject_speed]
    rows = [params.as_row()]
    labels = [params.label]
    x_cursor = 90.0
    k = 0
    for pair in range(n_pairs):
        x_cursor += rng.uniform(95.0, 140.0)
        blocked = int(rng.integers(0, 2))  # lanes {0,1} or {1,2}
        pair_lanes = [0, 1] if blocked == 0 else [1, 2]
        offs = [0.0, rng.uniform(2.0, 6.0)]
        if rng.random() < 0.5:  # occasional triple rewards fast weaving
            pair_lanes.append(pair_lanes[0])
            offs.append(offs[1] + rng.uniform(10.0, 16.0))
        speed = rng.uniform(15.0, 18.0)
        for off, lane in zip(offs, pair_lanes):
            p = drivers.BehaviorParams(v0=speed, T0=1.2, d0=2.0, a_max=2.0,
                                       a_des=3.0, politeness=0.3,
                                       delta_a_th=0.1, b_safe=4.0)
            ids.append(f"hv{k}")
            kinds.append(0)
            missions.append(0)
            lanes.append(lane)
            xs.append(x_cursor + off)
            vs.append(speed)
            rows.append(p.as_row())
            labels.append("scripted")
            k += 1
    n = len(ids)
    world = World(layout, ids, kinds, missions, xs, lanes, vs, list(vs),
                  np.full(n, 5.0), np.full(n, 2.0), np.stack(rows), labels,
                  np.zeros(n), horizon=horizon)
    world.lc_enabled[1:] = 0  # scripted traffic holds its lane
    series = CentralitySeries("subject")
    series.update(world)
    while not world.done:
        world.step({})
        if world.departed[0] or world.crashed[0]:
            break
        series.update(world)
    return series


def constant_speed_rollout(params: drivers.BehaviorParams, horizon: float = 40.0) -> CentralitySeries:
    """Everyone at the same constant speed: a flat-degree reference script.

    The subject's desired speed equals the common speed and its own lane is
    empty ahead, so every acceleration is exactly zero and both centrality
    series stay constant.
    """
    layout = straight_road(3, 2000.0)
    speed = 20.0
    p_sub = drivers.BehaviorParams(v0=speed, T0=params.T0, d0=params.d0,
                                   a_max=params.a_max, a_des=params.a_des,
                                   politeness=params.politeness,
                                   delta_a_th=params.delta_a_th,
                                   b_safe=params.b_safe, label=params.label)
    ids = ["subject", "hv0", "hv1"]
    xs = [100.0, 130.0, 80.0]
    lanes = [1, 0, 2]  # every vehicle leads its own lane: zero acceleration
    p_t = drivers.BehaviorParams(v0=speed, T0=1.2, d0=2.0, a_max=2.0, a_des=3.0)
    rows = [p_sub.as_row(), p_t.as_row(), p_t.as_row()]
    n = 3
    world = World(layout, ids, [0] * n, [0] * n, xs, lanes, [speed] * n,
                  [speed] * n, np.full(n, 5.0), np.full(n, 2.0), np.stack(rows),
                  ["x"] * n, np.zeros(n), horizon=horizon)
    world.lc_enabled[:] = 0
    series = CentralitySeries("subject")
    series.update(world)
    while not world.done:
        world.step({})
        series.update(world)
    return series


SLE_WINDOW = 10.0  # s, window for the per-window maxima feature


def preset_sle_stats(table: dict | None = None, seeds=range(20)) -> dict:
    """Mean windowed-SLE_max features of each preset over seeded runs."""
    table = table or drivers.PRESETS
    out = {}
    for label in drivers.PRESET_LABELS:
        feats = []
        for s in seeds:
            series = calibration_rollout(table[label], seed=int(s))
            feats.append(behavior_features(series, SLE_WINDOW))
        feats = np.array(feats)
        out[label] = {
            "sle_l_mean": float(feats[:, 0].mean()),
            "sle_o_mean": float(feats[:, 1].mean()),
            "score_mean": float((feats[:, 0] + feats[:, 1]).mean()),
            "n": len(feats),
        }
    return out


def calibrate_thresholds(table: dict | None = None, seeds=range(20)) -> ClassifierThresholds:
    """Fit the class boundaries at midpoints between preset score means."""
    stats = preset_sle_stats(table, seeds)
    s_c = stats[drivers.CONSERVATIVE]["score_mean"]
    s_m = stats[drivers.MODERATE]["score_mean"]
    s_a = stats[drivers.AGGRESSIVE]["score_mean"]
    if not s_c < s_m < s_a:
        raise RuntimeError(
            f"preset scores not ordered: cons={s_c:.4f} mod={s_m:.4f} agg={s_a:.4f}"
        )
    return ClassifierThresholds(0.5 * (s_c + s_m), 0.5 * (s_m + s_a))


def parameter_sweep(grid, thresholds: ClassifierThresholds,
                    seeds=range(20)) -> list:
    """Classify every BehaviorParams bundle in `grid` from simulation.

    Returns one row dict per grid point with the mean SLE features and the
    assigned label; per-cell simulation failures are recorded and skipped.
    """
    if not grid:
        raise ValueError("empty parameter grid")
    rows = []
    for p in grid:
        row = p.to_table()
        row["label_in"] = p.label
        try:
            feats = []
            for s in seeds:
                series = calibration_rollout(p, seed=int(s))
                feats.append(behavior_features(series, SLE_WINDOW))
            feats = np.array(feats)
            mean_feat = (float(feats[:, 0].mean()), float(feats[:, 1].mean()))
            row["sle_l"] = mean_feat[0]
            row["sle_o"] = mean_feat[1]
            row["score"] = aggressiveness_score(mean_feat)
            row["label"] = classify_behavior(mean_feat, thresholds)
            row["error"] = ""
        except Exception as exc:  # sweep must survive bad cells
            row["sle_l"] = row["sle_o"] = row["score"] = float("nan")
            row["label"] = ""
            row["error"] = str(exc)
        rows.append(row)
    return rows


SWEEP_FIELDS = ("label_in", "v0", "T0", "d0", "acc_max", "acc_des", "delta",
                "sin_phi_e", "delta_a_th", "b_safe", "sle_l", "sle_o", "score",
                "label", "error")


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in SWEEP_FIELDS})
