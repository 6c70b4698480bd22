"""Evaluation metrics and seeded episode batches.

C(%) counts episodes that encountered any crash; MF(%) counts mission
vehicles that did not accomplish their mission; DT is the mean distance
traveled by the AVs. The altruistic performance gains and the adaptation
error combine those numbers across policies and domains.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .qnet import QFunction
from .reward import RewardConfig
from .safety import SafetyConfig
from .training import LearnerConfig, run_episode
from .world import ScenarioConfig, build_scenario


@dataclass
class EpisodeMetrics:
    crashed: bool
    mission_failed: bool
    distance_traveled: float
    reward_sum: float
    interventions: int
    seed: int


@dataclass
class Aggregate:
    crash_pct: float
    mission_failed_pct: float
    mean_distance: float
    mean_reward: float
    mean_interventions: float
    n: int
    episodes: list = field(default_factory=list)

    def row(self) -> dict:
        return {
            "C_pct": self.crash_pct,
            "MF_pct": self.mission_failed_pct,
            "DT_m": self.mean_distance,
            "reward": self.mean_reward,
            "interventions": self.mean_interventions,
            "episodes": self.n,
        }


@dataclass(frozen=True)
class DomainPair:
    """One (scenario, behavior) evaluation domain."""

    scenario: str   # merge | exit
    behavior: str   # aggressive | moderate | conservative | mixed

    def label(self) -> str:
        return f"{self.scenario}:{self.behavior}"

    def mix(self) -> dict:
        if self.behavior == "mixed":
            return {"aggressive": 1.0, "moderate": 1.0, "conservative": 1.0}
        return {self.behavior: 1.0}


ALL_DOMAINS = tuple(
    DomainPair(s, b)
    for s in ("merge", "exit")
    for b in ("mixed", "aggressive", "moderate", "conservative")
)


def _episode_job(args):
    (weights, scenario_dict, rcfg_dict, scfg_dict, lcfg_dict, seed, phi) = args
    scen = ScenarioConfig(**scenario_dict)
    rcfg = RewardConfig(**rcfg_dict)
    scfg = SafetyConfig(**scfg_dict)
    lcfg = LearnerConfig(**lcfg_dict)
    lcfg.hidden = tuple(lcfg.hidden)
    world = build_scenario(scen.kind, scen.n_avs, scen.n_hvs, scen.behavior_mix,
                           seed=seed, cfg=scen, svo_phi=phi)
    rng = np.random.default_rng(seed)
    res = run_episode(world, lambda a: weights, scfg, rcfg, lcfg.grid_spec(),
                      lcfg.pool, lcfg.history, rng, mode="test", seed=seed)
    return EpisodeMetrics(
        crashed=res.crashed, mission_failed=res.mission_failed,
        distance_traveled=res.distance, reward_sum=res.reward_sum,
        interventions=res.interventions, seed=seed,
    )


def run_episodes(qf: QFunction, domain: DomainPair, n: int, seeds,
                 scenario: ScenarioConfig, rcfg: RewardConfig, scfg: SafetyConfig,
                 lcfg: LearnerConfig, workers: int = 1) -> Aggregate:
    """n greedy masked evaluation episodes; deterministic per seed list."""
    if n < 1:
        raise ValueError("need at least one episode")
    if qf.input_dim != lcfg.input_dim():
        raise ValueError(
            f"policy input {qf.input_dim} does not match configured observation "
            f"{lcfg.input_dim()}"
        )
    seeds = list(seeds)[:n]
    if len(seeds) < n:
        raise ValueError("not enough seeds for the requested episode count")
    scen = ScenarioConfig(**{**scenario.__dict__})
    scen.kind = domain.scenario
    scen.behavior_mix = domain.mix()
    weights = qf.copy_weights()
    jobs = [(weights, scen.__dict__, rcfg.to_dict(), scfg.to_dict(),
             lcfg.to_dict(), int(s), rcfg.phi) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            episodes = list(pool.map(_episode_job, jobs))
    else:
        episodes = [_episode_job(j) for j in jobs]
    return aggregate(episodes)


def aggregate(episodes) -> Aggregate:
    n = len(episodes)
    return Aggregate(
        crash_pct=100.0 * sum(e.crashed for e in episodes) / n,
        mission_failed_pct=100.0 * sum(e.mission_failed for e in episodes) / n,
        mean_distance=float(np.mean([e.distance_traveled for e in episodes])),
        mean_reward=float(np.mean([e.reward_sum for e in episodes])),
        mean_interventions=float(np.mean([e.interventions for e in episodes])),
        n=n,
        episodes=list(episodes),
    )


def pg_safety(c_egoistic: float, c_social: float, n_episodes: int) -> float:
    """Crash-percentage gain of the social over the egoistic population.

    Implemented literally as the paper's normalized difference; callers that
    want the plain percentage-point difference use the companion column.
    """
    if not (0.0 <= c_egoistic <= 100.0 and 0.0 <= c_social <= 100.0):
        raise ValueError("crash percentages must lie in [0, 100]")
    return (c_egoistic - c_social) / n_episodes


def pg_efficiency(dt_social: float, dt_egoistic: float) -> float | None:
    """Relative distance-traveled gain in percent; None when undefined."""
    if dt_egoistic == 0:
        return None
    return 100.0 * (dt_social - dt_egoistic) / dt_egoistic


def adaptation_error(c_pct: float, dt: float, dt_max: float,
                     w_s: float = 2.0 / 3.0, w_e: float = 1.0 / 3.0) -> float:
    """Weighted crash percentage plus normalized distance shortfall, in %."""
    if dt_max <= 0:
        raise ValueError("dt_max must be positive")
    if dt > dt_max + 1e-9:
        raise ValueError("dt must not exceed dt_max")
    return w_s * c_pct + w_e * 100.0 * (1.0 - dt / dt_max)


def adaptation_matrix_from_metrics(c_matrix, dt_matrix,
                                   w_s: float = 2.0 / 3.0,
                                   w_e: float = 1.0 / 3.0) -> np.ndarray:
    """A_error cells from crash/distance matrices; dt_max per test column."""
    c = np.asarray(c_matrix, dtype=float)
    dt = np.asarray(dt_matrix, dtype=float)
    if c.shape != dt.shape:
        raise ValueError("matrix shapes differ")
    out = np.zeros_like(c)
    dt_max = dt.max(axis=0)
    for col in range(c.shape[1]):
        for row in range(c.shape[0]):
            out[row, col] = adaptation_error(c[row, col], dt[row, col],
                                             float(dt_max[col]), w_s, w_e)
    return out
