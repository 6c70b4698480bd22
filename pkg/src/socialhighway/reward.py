"""Decentralized per-agent reward: egoistic traffic metrics plus distance-
discounted cooperation (other AVs), sympathy (HVs), and mission bonuses,
blended by the social-value-orientation angle phi."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .world import MissionStatus, World

LANE_GAP_PENALTY = 5.0  # m of travel distance per lane of lateral separation


@dataclass
class RewardConfig:
    phi: float = math.pi / 4        # SVO angle [rad], 0 egoistic .. pi/2 altruistic
    lam: float = 1.0                # distance exponent for cooperation/sympathy
    mu: float = 1.0                 # distance exponent for mission terms
    speed_weight: float = 0.4       # omega for the normalized-speed metric
    crash_weight: float = 1.0       # omega for the crash indicator (-1)
    lane_change_weight: float = 1.0  # omega for the lane-change cost metric
    lane_change_cost: float = 0.05  # cost per change
    speed_norm: float = 30.0        # v_max used for speed normalization [m/s]
    vehicle_weight: float = 1.0     # W, importance of each neighboring vehicle
    mission_weight: float = 1.0     # w, importance of a vehicle's mission
    d_floor: float = 1.0            # minimum distance clamp [m]
    mission_window: float = 5.0     # recency window for mission bonuses [s]
    r_unsafe: float = -1.0          # penalty stored for masked unsafe actions
    perception: float = 60.0        # contribution radius [m]

    def __post_init__(self):
        if not 0.0 <= self.phi <= math.pi / 2 + 1e-12:
            raise ValueError("phi must lie in [0, pi/2]")
        if self.lam < 0 or self.mu < 0:
            raise ValueError("distance exponents must be >= 0")
        if self.d_floor <= 0:
            raise ValueError("d_floor must be positive")

    def metric_weight_sum(self) -> float:
        return self.speed_weight + self.crash_weight + self.lane_change_weight

    def step_bound(self, max_neighbors: int) -> float:
        """Computable bound on |R| per step for this config."""
        ego_max = self.metric_weight_sum()
        per_vehicle = self.vehicle_weight / self.d_floor ** self.lam * ego_max \
            + self.mission_weight / self.d_floor ** self.mu
        social_max = max_neighbors * per_vehicle
        return math.cos(self.phi) * ego_max + math.sin(self.phi) * social_max

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _distance(world: World, i: int, j: int) -> float:
    return abs(world.x[i] - world.x[j]) + LANE_GAP_PENALTY * abs(int(world.lane[i]) - int(world.lane[j]))


def _vehicle_metrics(world: World, i: int, cfg: RewardConfig) -> float:
    """Sum over traffic metrics omega_m * x_m for one vehicle, each in [-1,1]."""
    x_speed = min(world.v[i] / cfg.speed_norm, 1.0)
    x_crash = -1.0 if world.crashed[i] else 0.0
    x_lane = -cfg.lane_change_cost if world.changed[i] else 0.0
    return (cfg.speed_weight * x_speed
            + cfg.crash_weight * x_crash
            + cfg.lane_change_weight * x_lane)


def ego_reward(world: World, agent: str, cfg: RewardConfig) -> float:
    """The agent's own traffic-metric reward r_i."""
    return float(_vehicle_metrics(world, world.index[agent], cfg))


def _mission_recent(world: World, j: int, cfg: RewardConfig) -> bool:
    """True when vehicle j has a mission accomplished within the window."""
    if world.mission[j] == kernels.MISSION_NONE:
        return False
    if world.mission_state[j] != MissionStatus.ACCOMPLISHED:
        return False
    return world.t - world.mission_time[j] <= cfg.mission_window + 1e-9


def mission_reward(world: World, agent: str, other: str, cfg: RewardConfig) -> float:
    """w / d^mu if `other` accomplished its mission recently, else 0."""
    i = world.index[agent]
    j = world.index[other]
    if not _mission_recent(world, j, cfg):
        return 0.0
    d = max(_distance(world, i, j), cfg.d_floor)
    return cfg.mission_weight / d ** cfg.mu


def social_reward(world: World, agent: str, cfg: RewardConfig) -> float:
    """Cooperation + sympathy + mission terms over vehicles in perception range."""
    i = world.index[agent]
    total = 0.0
    for j in range(world.n_vehicles):
        if j == i or world.departed[j]:
            continue
        d_raw = _distance(world, i, j)
        if d_raw > cfg.perception:
            continue
        d = max(d_raw, cfg.d_floor)
        total += cfg.vehicle_weight / d ** cfg.lam * _vehicle_metrics(world, j, cfg)
        if _mission_recent(world, j, cfg):
            total += cfg.mission_weight / d ** cfg.mu
    return float(total)


def total_reward(ego: float, social: float, phi: float) -> float:
    """cos(phi) * ego + sin(phi) * social."""
    if not 0.0 <= phi <= math.pi / 2 + 1e-12:
        raise ValueError("phi must lie in [0, pi/2]")
    return math.cos(phi) * ego + math.sin(phi) * social


def agent_reward(world: World, agent: str, cfg: RewardConfig):
    """Full decentralized reward for one agent.

    Returns (reward, parts) where parts carries the ego/social split and a
    mission-event flag used for replay stratification.
    """
    r_ego = ego_reward(world, agent, cfg)
    r_soc = social_reward(world, agent, cfg)
    i = world.index[agent]
    mission_event = False
    for j in range(world.n_vehicles):
        if j != i and not world.departed[j] and _mission_recent(world, j, cfg) \
                and _distance(world, i, j) <= cfg.perception:
            mission_event = True
            break
    r = total_reward(r_ego, r_soc, cfg.phi)
    return r, {"ego": r_ego, "social": r_soc, "mission_event": mission_event,
               "crashed": bool(world.crashed[i])}
