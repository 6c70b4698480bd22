"""Ego-centric multi-channel velocity-map observations and temporal stacks.

Channel order: 0 AVs, 1 HVs, 2 mission vehicle, 3 ego attention, 4 road
layout. Pixel intensities encode relative speed through a clipped
logarithmic map (0.5 = same speed as ego).
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels

N_CHANNELS = 5
CHANNEL_NAMES = ("avs", "hvs", "mission", "ego", "road")


@dataclass(frozen=True)
class GridSpec:
    """Render grid: H lateral rows x W longitudinal columns over lon_range m."""

    lat_cells: int = 16
    lon_cells: int = 64
    lon_range: float = 120.0   # window length centred on the ego [m]
    pixel_s0: float = 2.0      # log-map knee [m/s]
    pixel_vref: float = 20.0   # relative speed mapped to full scale [m/s]

    @property
    def shape(self):
        return (N_CHANNELS, self.lat_cells, self.lon_cells)


@dataclass
class Observation:
    """One rendered frame plus metadata."""

    channels: np.ndarray  # (5, H, W) float32 in [0, 1]
    ego_id: str
    t: float

    @property
    def shape(self):
        return self.channels.shape


class StackedState:
    """Last K observations of one ego, oldest first, front-padded at start."""

    def __init__(self, k: int, ego_id: str):
        if k < 1:
            raise ValueError("history length must be >= 1")
        self.k = int(k)
        self.ego_id = ego_id
        self.frames: list = []

    def push(self, obs: Observation) -> "StackedState":
        """Functional append: returns a new stack, oldest frame dropped."""
        if obs.ego_id != self.ego_id:
            raise ValueError(f"observation ego {obs.ego_id!r} != stack ego {self.ego_id!r}")
        out = StackedState(self.k, self.ego_id)
        if not self.frames:
            out.frames = [obs] * self.k
        else:
            out.frames = list(self.frames[1:]) + [obs]
        return out

    def as_array(self) -> np.ndarray:
        """(K, 5, H, W) float32, oldest first."""
        if not self.frames:
            raise ValueError("empty stack")
        return np.stack([f.channels for f in self.frames])

    def __len__(self):
        return len(self.frames)


def stack_history(prev: StackedState, obs: Observation) -> StackedState:
    """Append obs to prev, keeping the fixed history length."""
    return prev.push(obs)


def speed_to_pixel(rel_v: float, spec: GridSpec = GridSpec()) -> float:
    """Clipped log map of relative speed into [0, 1]; odd around 0.5."""
    return float(kernels.speed_pixel_s(float(rel_v), spec.pixel_s0, spec.pixel_vref))


def render_velocity_map(world, ego_id: str, spec: GridSpec = GridSpec()) -> Observation:
    """Render the 5-channel ego-centric map for one AV.

    Vehicles outside the lon_range window are absent (partial observability);
    the road channel depends only on the layout.
    """
    if ego_id not in world.index:
        raise KeyError(f"unknown ego {ego_id!r}")
    i = world.index[ego_id]
    if world.kind[i] != kernels.KIND_AV:
        raise ValueError(f"ego {ego_id!r} is not an AV")
    out = np.zeros(spec.shape, dtype=np.float32)
    kernels.render_channels(
        world.x, world.v, world.lane, world.prev_lane, world.dual, world.kind,
        world.mission, world.crashed, world.departed, world.length, world.road,
        i, spec.lon_range, spec.pixel_s0, spec.pixel_vref, out,
    )
    return Observation(channels=out, ego_id=ego_id, t=world.t)


def pool_stack(stack: StackedState, pool: tuple) -> np.ndarray:
    """Max-pool each frame by (lat, lon) block sizes; returns (K,5,h,w)."""
    arr = stack.as_array()
    k, c, h, w = arr.shape
    ph, pw = pool
    if h % ph or w % pw:
        raise ValueError(f"grid {h}x{w} not divisible by pool {pool}")
    return arr.reshape(k, c, h // ph, ph, w // pw, pw).max(axis=(3, 5))


def flatten_state(stack: StackedState, pool: tuple = (4, 4)) -> np.ndarray:
    """Learner input: pooled stack flattened to a float64 vector."""
    return pool_stack(stack, pool).astype(np.float64).ravel()


MAGIC = b"SHVM"


def save_tensor(obs: Observation, path):
    """Write a frame as raw float32 with a small textual header."""
    arr = np.ascontiguousarray(obs.channels, dtype=np.float32)
    header = "{} {} {} {}\n".format(*arr.shape, ",".join(CHANNEL_NAMES)).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(arr.tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError("not a velocity-map tensor file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = fh.read(hlen).decode().split()
        c, h, w = int(header[0]), int(header[1]), int(header[2])
        data = np.frombuffer(fh.read(), dtype=np.float32)
    return data.reshape(c, h, w)
