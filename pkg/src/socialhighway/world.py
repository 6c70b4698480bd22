"""Mutable simulation state and the per-tick world stepper.

A World owns structure-of-arrays vehicle state plus the road layout and an
append-only event log. `step` advances one decision interval (the POSG
step): the lateral/meta-action phase, then decision_dt/dt physics substeps.
"""

import enum
import json
from dataclasses import dataclass

import numpy as np

from . import drivers, kernels
from .road import RAMP_EXIT, RAMP_MERGE, RoadLayout, exit_road, merge_road


class MetaAction(enum.IntEnum):
    CHANGE_RIGHT = 0
    CHANGE_LEFT = 1
    ACCELERATE = 2
    DECELERATE = 3
    IDLE = 4


N_ACTIONS = 5
ACCEL_STEP = 5.0  # m/s change of the commanded speed per Accelerate/Decelerate


class Mission(enum.IntEnum):
    NONE = 0
    MERGE = 1
    EXIT = 2


class MissionStatus(enum.IntEnum):
    PENDING = 0
    ACCOMPLISHED = 1
    FAILED = 2


class ScenarioError(RuntimeError):
    """Scenario construction cannot place the requested vehicles."""


@dataclass
class VehicleView:
    """Read-only snapshot of one vehicle, for inspection and logs."""

    id: str
    kind: str
    mission: Mission
    x: float
    lane: int
    v: float
    a: float
    length: float
    width: float
    crashed: bool
    departed: bool
    behavior_label: str
    svo_phi: float


@dataclass
class ScenarioConfig:
    """Scenario construction knobs (geometry, load, spawn layout)."""

    kind: str = "merge"                 # merge | exit
    n_avs: int = 4
    n_hvs: int = 18
    n_through: int = 3
    road_length: float = 1000.0
    dt: float = 0.1
    decision_dt: float = 1.0
    horizon: float = 60.0
    mission_tail: float = 5.0
    behavior_mix: dict | None = None    # label -> weight, default uniform
    mission_behavior: str | None = None  # pin a preset label, else drawn from mix
    mission_is_av: bool = False
    speed_lo: float = 20.0
    speed_hi: float = 26.0
    mission_speed_lo: float = 15.0
    mission_speed_hi: float = 19.0
    spawn_front_frac: float = 0.7       # front of the main traffic block
    right_lane_bias: float = 0.15       # extra probability mass on the rightmost lane
    headway_lo: float = 1.5             # spawn headways in [lo, hi] * d*
    headway_hi: float = 3.0
    av_right_lane: bool = True          # place the first AV in the rightmost through lane
    vehicle_length: float = 5.0
    vehicle_width: float = 2.0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if d["behavior_mix"] is None:
            d["behavior_mix"] = {k: 1.0 for k in drivers.PRESET_LABELS}
        return d


class World:
    """Complete mutable simulation state for one episode."""

    def __init__(self, layout: RoadLayout, ids, kind, mission, x, lane, v,
                 tspeed, length, width, P, behavior_labels, svo_phi,
                 dt=0.1, decision_dt=1.0, horizon=60.0, mission_tail=5.0,
                 rng_seed=0):
        n = len(ids)
        self.layout = layout
        self.road = layout.packed()
        self.ids = list(ids)
        self.index = {vid: i for i, vid in enumerate(self.ids)}
        self.kind = np.asarray(kind, dtype=np.int64)
        self.mission = np.asarray(mission, dtype=np.int64)
        self.x = np.asarray(x, dtype=np.float64)
        self.lane = np.asarray(lane, dtype=np.int64)
        self.v = np.asarray(v, dtype=np.float64)
        self.tspeed = np.asarray(tspeed, dtype=np.float64)
        self.acc = np.zeros(n, dtype=np.float64)
        self.prev_lane = self.lane.copy()
        self.dual = np.zeros(n, dtype=np.uint8)
        self.crashed = np.zeros(n, dtype=np.uint8)
        self.departed = np.zeros(n, dtype=np.uint8)
        self.changed = np.zeros(n, dtype=np.uint8)
        self.lc_enabled = np.ones(n, dtype=np.uint8)
        self.cooldown = np.zeros(n, dtype=np.int64)
        self.odo = np.zeros(n, dtype=np.float64)
        self.length = np.asarray(length, dtype=np.float64)
        self.width = np.asarray(width, dtype=np.float64)
        self.P = np.asarray(P, dtype=np.float64)
        self.behavior_labels = list(behavior_labels)
        self.svo_phi = np.asarray(svo_phi, dtype=np.float64)
        self.mission_state = np.zeros(n, dtype=np.int64)
        self.mission_time = np.full(n, np.nan)
        self.dt = float(dt)
        self.decision_dt = float(decision_dt)
        self.horizon = float(horizon)
        self.mission_tail = float(mission_tail)
        self.t = 0.0
        self.step_count = 0
        self.events = []
        self.rng_seed = rng_seed
        self.done = False
        self.done_reason = None
        self._tail_deadline = None
        # scratch event buffers for the kernels
        self._ev_type = np.zeros(512, dtype=np.int64)
        self._ev_i = np.zeros(512, dtype=np.int64)
        self._ev_j = np.zeros(512, dtype=np.int64)
        self._ev_k = np.zeros(512, dtype=np.int64)

    # -- introspection -------------------------------------------------

    @property
    def n_vehicles(self):
        return len(self.ids)

    def av_ids(self, alive_only=False):
        out = []
        for i, vid in enumerate(self.ids):
            if self.kind[i] != kernels.KIND_AV:
                continue
            if alive_only and (self.crashed[i] or self.departed[i]):
                continue
            out.append(vid)
        return out

    def vehicle(self, vid: str) -> VehicleView:
        i = self.index[vid]
        return VehicleView(
            id=vid,
            kind="AV" if self.kind[i] == kernels.KIND_AV else "HV",
            mission=Mission(self.mission[i]),
            x=float(self.x[i]),
            lane=int(self.lane[i]),
            v=float(self.v[i]),
            a=float(self.acc[i]),
            length=float(self.length[i]),
            width=float(self.width[i]),
            crashed=bool(self.crashed[i]),
            departed=bool(self.departed[i]),
            behavior_label=self.behavior_labels[i],
            svo_phi=float(self.svo_phi[i]),
        )

    def mission_vehicle_id(self):
        for i, vid in enumerate(self.ids):
            if self.mission[i] != kernels.MISSION_NONE:
                return vid
        return None

    def state_arrays(self):
        """The mutable array bundle, in kernel argument order."""
        return (self.x, self.v, self.acc, self.lane, self.prev_lane, self.dual,
                self.tspeed, self.kind, self.mission, self.crashed,
                self.departed, self.odo, self.length, self.P, self.road,
                self.lc_enabled, self.cooldown, self.changed)

    def clone_arrays(self):
        """Deep copies of the mutable arrays (projection scratch state)."""
        return (self.x.copy(), self.v.copy(), self.acc.copy(), self.lane.copy(),
                self.prev_lane.copy(), self.dual.copy(), self.tspeed.copy(),
                self.kind.copy(), self.mission.copy(), self.crashed.copy(),
                self.departed.copy(), self.odo.copy(), self.length.copy(),
                self.P.copy(), self.road.copy(), self.lc_enabled.copy(),
                self.cooldown.copy(), self.changed.copy())

    def fingerprint(self) -> bytes:
        """Byte-level digest of the full dynamic state (determinism checks)."""
        parts = [self.x, self.v, self.acc, self.lane, self.tspeed, self.crashed,
                 self.departed, self.odo, self.mission_state]
        return b"".join(np.ascontiguousarray(a).tobytes() for a in parts)

    # -- events ---------------------------------------------------------

    def _log(self, etype, **fields):
        ev = {"step": self.step_count, "t": round(self.t, 6), "type": etype}
        ev.update(fields)
        self.events.append(ev)
        return ev

    def _drain_kernel_events(self, n_ev, tick_events):
        for e in range(n_ev):
            et = int(self._ev_type[e])
            i = int(self._ev_i[e])
            if et == kernels.EV_COLLISION:
                j = int(self._ev_j[e])
                ev = self._log("collision", ids=[self.ids[i], self.ids[j]],
                               x=float(self.x[i]), lane=int(self._ev_k[e]))
            elif et == kernels.EV_LANE_CHANGE:
                ev = self._log("lane_change", ids=[self.ids[i]],
                               from_lane=int(self._ev_j[e]), to_lane=int(self._ev_k[e]),
                               x=float(self.x[i]))
            elif et == kernels.EV_DEPARTED:
                ev = self._log("departed", ids=[self.ids[i]], lane=int(self._ev_j[e]),
                               x=float(self.x[i]))
            else:
                continue
            tick_events.append(ev)

    def events_jsonl(self) -> str:
        """The episode event log as JSON lines (one event object per line)."""
        return "\n".join(json.dumps(e, sort_keys=True) for e in self.events)

    # -- stepping --------------------------------------------------------

    def step(self, av_actions: dict):
        """Advance one decision interval with the given AV meta-actions.

        av_actions maps agent id -> MetaAction for every non-crashed,
        non-departed AV. Returns the list of events emitted this tick.
        """
        if self.done:
            raise RuntimeError("world is terminal")
        alive = set(self.av_ids(alive_only=True))
        given = set(av_actions)
        if given - alive:
            bad = sorted(given - alive)[0]
            raise ValueError(f"action supplied for unknown or inactive agent {bad!r}")
        if alive - given:
            missing = sorted(alive - given)[0]
            raise ValueError(f"missing action for agent {missing!r}")

        n = self.n_vehicles
        av_req = np.zeros(n, dtype=np.int64)
        for vid, action in av_actions.items():
            action = MetaAction(action)
            i = self.index[vid]
            if action == MetaAction.ACCELERATE:
                self.tspeed[i] = min(self.tspeed[i] + ACCEL_STEP, kernels.V_CAP)
            elif action == MetaAction.DECELERATE:
                self.tspeed[i] = max(self.tspeed[i] - ACCEL_STEP, 0.0)
            elif action == MetaAction.CHANGE_RIGHT:
                av_req[i] = 1
            elif action == MetaAction.CHANGE_LEFT:
                av_req[i] = -1

        tick_events = []
        n_ev = kernels.lane_phase(
            self.x, self.v, self.lane, self.prev_lane, self.dual, self.kind,
            self.mission, self.crashed, self.departed, self.length, self.P,
            self.road, self.lc_enabled, self.cooldown, self.changed, av_req,
            self._ev_type, self._ev_i, self._ev_j, self._ev_k, 0,
        )
        self._drain_kernel_events(n_ev, tick_events)

        n_sub = int(round(self.decision_dt / self.dt))
        for _ in range(n_sub):
            kernels.compute_accels(
                self.x, self.v, self.lane, self.tspeed, self.kind, self.mission,
                self.crashed, self.departed, self.length, self.P, self.road, self.acc,
            )
            n_ev = kernels.integrate_and_collide(
                self.x, self.v, self.acc, self.lane, self.prev_lane, self.dual,
                self.crashed, self.departed, self.odo, self.length, self.road,
                self.dt, self._ev_type, self._ev_i, self._ev_j, self._ev_k, 0,
            )
            self.t += self.dt
            self._drain_kernel_events(n_ev, tick_events)

        self.step_count += 1
        self._update_missions(tick_events)
        self._update_termination()
        return tick_events

    def _update_missions(self, tick_events):
        nt = self.layout.n_through
        for i in range(self.n_vehicles):
            m = self.mission[i]
            if m == kernels.MISSION_NONE or self.mission_state[i] != MissionStatus.PENDING:
                continue
            if self.crashed[i]:
                self.mission_state[i] = MissionStatus.FAILED
            elif m == kernels.MISSION_MERGE:
                if self.lane[i] < nt and self.x[i] > self.layout.junction_x:
                    self.mission_state[i] = MissionStatus.ACCOMPLISHED
            elif m == kernels.MISSION_EXIT:
                if self.lane[i] == self.layout.ramp_lane:
                    self.mission_state[i] = MissionStatus.ACCOMPLISHED
                elif self.lane[i] < nt and self.x[i] > self.layout.ramp_x1:
                    self.mission_state[i] = MissionStatus.FAILED
            if self.mission_state[i] != MissionStatus.PENDING:
                self.mission_time[i] = self.t
                status = MissionStatus(self.mission_state[i]).name.lower()
                tick_events.append(self._log("mission_" + status, ids=[self.ids[i]],
                                             x=float(self.x[i]), lane=int(self.lane[i])))
                if self._tail_deadline is None:
                    self._tail_deadline = self.t + self.mission_tail

    def _update_termination(self):
        if self.done:
            return
        for i in range(self.n_vehicles):
            if self.crashed[i] and (self.kind[i] == kernels.KIND_AV
                                    or self.mission[i] != kernels.MISSION_NONE):
                self._finish("crash")
                return
        avs = [self.index[v] for v in self.av_ids()]
        if avs and all(self.crashed[i] or self.departed[i] for i in avs):
            self._finish("avs_resolved")
            return
        if self._tail_deadline is not None and self.t >= self._tail_deadline - 1e-9:
            self._finish("mission_tail")
            return
        if self.t >= self.horizon - 1e-9:
            self._finish("horizon")

    def _finish(self, reason):
        # pending missions are failures once the episode is over
        for i in range(self.n_vehicles):
            if self.mission[i] != kernels.MISSION_NONE and \
                    self.mission_state[i] == MissionStatus.PENDING:
                self.mission_state[i] = MissionStatus.FAILED
                self._log("mission_failed", ids=[self.ids[i]], x=float(self.x[i]),
                          lane=int(self.lane[i]))
        self.done = True
        self.done_reason = reason
        self._log("episode_end", reason=reason)


def mission_status(world: World, vid: str) -> MissionStatus:
    """Mission outcome for a mission vehicle (total over mission vehicles)."""
    i = world.index[vid]
    if world.mission[i] == kernels.MISSION_NONE:
        raise ValueError(f"vehicle {vid!r} has no mission")
    return MissionStatus(world.mission_state[i])


def _place_lane_stream(rng, count, front, back, speeds, dstars, headway_lo, headway_hi, length):
    """Positions for one lane, front to back, spawn-headway spaced."""
    xs = []
    xpos = front - rng.uniform(0.0, 25.0)
    for k in range(count):
        if k > 0:
            gap = rng.uniform(headway_lo, headway_hi) * dstars[k] + length
            xpos -= gap
        if xpos < back:
            return None
        xs.append(xpos)
    return xs


def build_scenario(kind, n_avs=None, n_hvs=None, behavior_mix=None, seed=0,
                   cfg: ScenarioConfig | None = None,
                   behavior_table: dict | None = None,
                   svo_phi: float = 0.0) -> World:
    """Construct a merge or exit World, deterministic under (seed, args).

    One mission vehicle is always added on top of n_hvs (human-driven unless
    cfg.mission_is_av). Raises ScenarioError when the road cannot hold the
    requested load at spawn headways.
    """
    cfg = cfg or ScenarioConfig()
    kind = str(kind).lower()
    if kind not in ("merge", "exit"):
        raise ValueError(f"unknown scenario kind {kind!r}")
    n_avs = cfg.n_avs if n_avs is None else int(n_avs)
    n_hvs = cfg.n_hvs if n_hvs is None else int(n_hvs)
    if n_avs < 1:
        raise ValueError("need at least one AV")
    if n_hvs < 0:
        raise ValueError("n_hvs must be >= 0")

    table = behavior_table or drivers.PRESETS
    if behavior_mix is None:
        mix_spec = cfg.behavior_mix or {k: 1.0 for k in drivers.PRESET_LABELS}
        behavior_mix = drivers.BehaviorMix([(table[k], w) for k, w in mix_spec.items()])
    elif isinstance(behavior_mix, dict):
        behavior_mix = drivers.BehaviorMix([(table[k], w) for k, w in behavior_mix.items()])

    rng = np.random.default_rng(seed)
    if kind == "merge":
        layout = merge_road(cfg.n_through, cfg.road_length)
    else:
        layout = exit_road(cfg.n_through, cfg.road_length)
    nt = layout.n_through

    ids, kinds, missions, lanes, xs, vs, rows, labels = [], [], [], [], [], [], [], []

    # mission vehicle first so its draw order is stable
    if cfg.mission_behavior is not None:
        m_params = table[cfg.mission_behavior]
    else:
        m_params = drivers.sample_behavior(behavior_mix, rng)
    m_speed = rng.uniform(cfg.mission_speed_lo, cfg.mission_speed_hi)
    if kind == "merge":
        m_lane = layout.ramp_lane
        m_x = rng.uniform(15.0, 35.0)
    else:
        m_lane = nt - 1
        m_x = rng.uniform(20.0, 50.0)
    ids.append("mv0")
    kinds.append(kernels.KIND_AV if cfg.mission_is_av else kernels.KIND_HV)
    missions.append(kernels.MISSION_MERGE if kind == "merge" else kernels.MISSION_EXIT)
    lanes.append(m_lane)
    xs.append(m_x)
    vs.append(m_speed)
    rows.append(m_params.as_row())
    labels.append(m_params.label)

    # main traffic: AVs and HVs share the through-lane streams; the layout is
    # redrawn a few times before the road is declared too short
    total = n_avs + n_hvs
    is_av = np.zeros(total, dtype=bool)
    is_av[:n_avs] = True
    front = cfg.spawn_front_frac * cfg.road_length
    moderate = table[drivers.MODERATE]

    slot_x = None
    for _attempt in range(8):
        lane_of = np.zeros(total, dtype=np.int64)
        for k in range(total):
            if rng.random() < cfg.right_lane_bias:
                lane_of[k] = nt - 1
            else:
                lane_of[k] = rng.integers(0, nt)
        if cfg.av_right_lane:
            lane_of[0] = nt - 1
        order = rng.permutation(total)
        per_lane = {l: [] for l in range(nt)}
        for k in order:
            per_lane[int(lane_of[k])].append(int(k))

        attempt_slots = {}
        feasible = True
        for l in range(nt):
            members = per_lane[l]
            back = 5.0
            if kind == "exit" and l == m_lane:
                back = m_x + cfg.vehicle_length + 10.0  # clear of the mission vehicle
            speeds, dstars, params_l = [], [], []
            for k in members:
                if is_av[k]:
                    params_l.append(moderate)
                else:
                    params_l.append(drivers.sample_behavior(behavior_mix, rng))
                sp = rng.uniform(cfg.speed_lo, cfg.speed_hi)
                speeds.append(sp)
                p = params_l[-1]
                dstars.append(p.d0 + sp * p.T0)
            placed = _place_lane_stream(rng, len(members), front, back, speeds, dstars,
                                        cfg.headway_lo, cfg.headway_hi, cfg.vehicle_length)
            if placed is None:
                feasible = False
                break
            for k, xpos, sp, p in zip(members, placed, speeds, params_l):
                attempt_slots[k] = (l, xpos, sp, p)
        if feasible:
            slot_x = attempt_slots
            break
    if slot_x is None:
        raise ScenarioError(
            f"road too short: cannot place {total} vehicles on {nt} lanes "
            f"of a {cfg.road_length:.0f} m road"
        )

    n_av_seen = 0
    n_hv_seen = 0
    for k in range(total):
        l, xpos, sp, p = slot_x[k]
        if is_av[k]:
            ids.append(f"av{n_av_seen}")
            kinds.append(kernels.KIND_AV)
            n_av_seen += 1
        else:
            ids.append(f"hv{n_hv_seen}")
            kinds.append(kernels.KIND_HV)
            n_hv_seen += 1
        missions.append(kernels.MISSION_NONE)
        lanes.append(l)
        xs.append(xpos)
        vs.append(sp)
        rows.append(p.as_row())
        labels.append(p.label if kinds[-1] == kernels.KIND_HV else drivers.MODERATE)

    n = len(ids)
    P = np.stack(rows)
    svo = np.zeros(n)
    tspeed = np.array(vs, dtype=np.float64)
    for i in range(n):
        if kinds[i] == kernels.KIND_AV:
            svo[i] = svo_phi

    world = World(
        layout=layout, ids=ids, kind=kinds, mission=missions, x=xs, lane=lanes,
        v=vs, tspeed=tspeed,
        length=np.full(n, cfg.vehicle_length), width=np.full(n, cfg.vehicle_width),
        P=P, behavior_labels=labels, svo_phi=svo,
        dt=cfg.dt, decision_dt=cfg.decision_dt, horizon=cfg.horizon,
        mission_tail=cfg.mission_tail, rng_seed=seed,
    )
    # sanity: no spawn overlaps
    for i in range(n):
        for j in range(i + 1, n):
            if world.lane[i] == world.lane[j] and \
                    abs(world.x[i] - world.x[j]) < 0.5 * (world.length[i] + world.length[j]):
                raise ScenarioError("spawn overlap; road too short for requested load")
    return world
