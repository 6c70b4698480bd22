"""Mixed-autonomy highway simulator and altruistic multi-agent DDQN harness."""

__version__ = "0.1.0"

from .drivers import (AGGRESSIVE, CONSERVATIVE, MODERATE, PRESETS, TYPICAL,
                      BehaviorMix, BehaviorParams, idm_acceleration,
                      idm_desired_gap, mobil_decide, sample_behavior)
from .road import RoadLayout, exit_road, merge_road, straight_road
from .world import (MetaAction, Mission, MissionStatus, ScenarioConfig,
                    ScenarioError, World, build_scenario, mission_status)

__all__ = [
    "AGGRESSIVE", "CONSERVATIVE", "MODERATE", "PRESETS", "TYPICAL",
    "BehaviorMix", "BehaviorParams", "idm_acceleration", "idm_desired_gap",
    "mobil_decide", "sample_behavior", "RoadLayout", "exit_road", "merge_road",
    "straight_road", "MetaAction", "Mission", "MissionStatus",
    "ScenarioConfig", "ScenarioError", "World", "build_scenario",
    "mission_status",
]
