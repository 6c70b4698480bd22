"""Road geometry: through lanes plus an optional merge or exit ramp lane."""

from dataclasses import dataclass, field

import numpy as np

RAMP_NONE = 0
RAMP_MERGE = 1
RAMP_EXIT = 2

_RAMP_NAMES = {RAMP_NONE: "none", RAMP_MERGE: "merge", RAMP_EXIT: "exit"}


@dataclass(frozen=True)
class LaneSpec:
    """One lane: lateral index 0 is leftmost; ramp lanes sit to the right."""

    lane_id: int
    lateral_index: int
    x_start: float
    x_end: float


@dataclass(frozen=True)
class RoadLayout:
    """Lane set, optional ramp segment, and total longitudinal extent (m)."""

    n_through: int
    length: float
    ramp_kind: int = RAMP_NONE
    ramp_x0: float = 0.0
    ramp_x1: float = 0.0
    junction_x: float = 0.0
    lanes: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.n_through < 2:
            raise ValueError("need at least 2 through lanes")
        if self.ramp_kind != RAMP_NONE:
            for p in (self.ramp_x0, self.ramp_x1, self.junction_x):
                if not 0.0 <= p <= self.length:
                    raise ValueError("ramp positions must lie within [0, length]")
            if self.ramp_x0 >= self.ramp_x1:
                raise ValueError("ramp extent is empty")
        lanes = [LaneSpec(i, i, 0.0, self.length) for i in range(self.n_through)]
        if self.ramp_kind != RAMP_NONE:
            lanes.append(LaneSpec(self.n_through, self.n_through, self.ramp_x0, self.ramp_x1))
        object.__setattr__(self, "lanes", tuple(lanes))

    @property
    def n_lanes(self):
        return len(self.lanes)

    @property
    def ramp_lane(self):
        return self.n_through if self.ramp_kind != RAMP_NONE else None

    def lane_extent(self, lane_id: int):
        return self.lanes[lane_id].x_start, self.lanes[lane_id].x_end

    def packed(self) -> np.ndarray:
        """Float64 vector consumed by the simulation kernels."""
        out = np.zeros(8, dtype=np.float64)
        out[0] = self.n_lanes
        out[1] = self.n_through
        out[2] = self.length
        out[3] = self.ramp_kind
        out[4] = self.ramp_x0
        out[5] = self.ramp_x1
        out[6] = self.junction_x
        return out

    def describe(self) -> dict:
        return {
            "n_through": self.n_through,
            "length": self.length,
            "ramp": _RAMP_NAMES[self.ramp_kind],
            "ramp_extent": [self.ramp_x0, self.ramp_x1],
            "junction_x": self.junction_x,
        }


def merge_road(n_through: int = 3, length: float = 600.0, ramp_end: float = 180.0,
               junction_x: float = 80.0) -> RoadLayout:
    """Highway with an on-ramp lane ending at ramp_end; merging allowed past junction_x."""
    return RoadLayout(n_through, length, RAMP_MERGE, 0.0, ramp_end, junction_x)


def exit_road(n_through: int = 3, length: float = 600.0, window: float = 100.0,
              end_offset: float = 60.0) -> RoadLayout:
    """Highway with an off-ramp lane open on [length-end_offset-window, length-end_offset]."""
    x1 = length - end_offset
    x0 = x1 - window
    return RoadLayout(n_through, length, RAMP_EXIT, x0, x1, x0)


def straight_road(n_through: int = 3, length: float = 600.0) -> RoadLayout:
    """Plain highway, no ramps (used by the behavior-calibration scripts)."""
    return RoadLayout(n_through, length)
