"""Structured config: one YAML file with sections {scenario, behaviors,
reward, safety, learner, harness}. Every experiment writes back the fully
resolved config so reruns reproduce outputs byte for byte."""

import math
from dataclasses import dataclass, field

import yaml

from .drivers import load_behavior_table
from .qnet import config_hash
from .reward import RewardConfig
from .safety import SafetyConfig
from .training import LearnerConfig
from .world import ScenarioConfig


@dataclass
class HarnessConfig:
    eval_episodes: int = 100
    eval_seed: int = 1000
    phi_grid: tuple = (0.0, math.pi / 8, math.pi / 4, 3 * math.pi / 8, math.pi / 2)
    train_domains: tuple = ()   # empty -> all eight
    test_domains: tuple = ()
    sweep_points: int = 5       # per axis for the sensitivity sweep
    sweep_axes: int = 1         # 1 = single aggressiveness axis, 2 = lat x lon
    transfer_source_episodes: int = 0  # 0 -> same as learner.episodes
    classifier_thresholds: dict | None = None
    classifier_seeds: int = 20
    sle_window: float = 10.0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["phi_grid"] = list(self.phi_grid)
        d["train_domains"] = list(self.train_domains)
        d["test_domains"] = list(self.test_domains)
        return d


@dataclass
class Config:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    behaviors: dict = field(default_factory=dict)  # raw overrides section
    seed: int = 0
    workers: int = 1

    def behavior_table(self) -> dict:
        return load_behavior_table(self.behaviors)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "reward": self.reward.to_dict(),
            "safety": self.safety.to_dict(),
            "learner": self.learner.to_dict(),
            "harness": self.harness.to_dict(),
            "behaviors": self.behaviors,
            "seed": self.seed,
            "workers": self.workers,
        }

    def hash(self) -> str:
        return config_hash(self.to_dict())


def _apply(dc, section: dict, name: str):
    for key, val in (section or {}).items():
        if not hasattr(dc, key):
            raise KeyError(f"unknown key {key!r} in config section {name!r}")
        setattr(dc, key, val)
    return dc


def from_dict(raw: dict) -> Config:
    cfg = Config()
    _apply(cfg.scenario, raw.get("scenario"), "scenario")
    _apply(cfg.reward, raw.get("reward"), "reward")
    _apply(cfg.safety, raw.get("safety"), "safety")
    _apply(cfg.learner, raw.get("learner"), "learner")
    _apply(cfg.harness, raw.get("harness"), "harness")
    cfg.learner.hidden = tuple(cfg.learner.hidden)
    cfg.harness.phi_grid = tuple(cfg.harness.phi_grid)
    cfg.harness.train_domains = tuple(cfg.harness.train_domains)
    cfg.harness.test_domains = tuple(cfg.harness.test_domains)
    cfg.behaviors = raw.get("behaviors") or {}
    cfg.seed = int(raw.get("seed", 0))
    cfg.workers = int(raw.get("workers", 1))
    cfg.reward.__post_init__()
    cfg.safety.__post_init__()
    return cfg


def load(path) -> Config:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return from_dict(raw)


def dump(cfg: Config, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)


DESK_MERGE = {
    "scenario": {
        "kind": "merge",
        "n_avs": 2,
        "n_hvs": 6,
        "n_through": 2,
        "road_length": 400.0,
        "spawn_front_frac": 0.75,
        "right_lane_bias": 0.5,
        "speed_lo": 16.0,
        "speed_hi": 22.0,
        "mission_behavior": "moderate",
    },
    "reward": {
        "phi": math.pi / 4,
        "mission_weight": 8.0,
        "vehicle_weight": 2.0,
    },
    "learner": {
        "episodes": 600,
        "prestore_episodes": 50,
    },
    "harness": {
        "eval_episodes": 100,
    },
}


def desk_config(**overrides) -> Config:
    """The desk-scale merge experiment config used by the acceptance suite."""
    raw = yaml.safe_load(yaml.safe_dump(DESK_MERGE))
    for section, vals in overrides.items():
        raw.setdefault(section, {}).update(vals)
    return from_dict(raw)
