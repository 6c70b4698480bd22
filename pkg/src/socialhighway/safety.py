"""Safety prioritizer: TTC-scored action masking over forward projections.

Candidate actions are scored by rolling a cloned world forward with HVs on
their driver models and all other AVs holding their targets; an action whose
minimum projected time-to-collision falls below safe_th is masked. During
training the exploration draw is repeated over the safe subset; during
testing the policy is greedy over the safe subset. If everything is unsafe
the highest-scoring action is taken.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .world import ACCEL_STEP, MetaAction, N_ACTIONS, World


@dataclass
class SafetyConfig:
    safe_th: float = 1.5   # s of projected TTC below which an action is unsafe
    n_steps: int = 10      # planning horizon in decision ticks
    ttc_cap: float = 100.0  # score when no collision is projected [s]

    def __post_init__(self):
        if self.safe_th < 0:
            raise ValueError("safe_th must be >= 0")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.ttc_cap <= self.safe_th:
            raise ValueError("ttc_cap must exceed safe_th")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FilterResult:
    """Outcome of masked action selection for one agent at one tick."""

    chosen: MetaAction
    rejected: list            # [(MetaAction, score)] for every unsafe action
    scores: np.ndarray        # per-action safety scores, MetaAction order
    raw: MetaAction           # the unmasked policy's selection
    raw_was_unsafe: bool
    fallback: bool            # True when no action was safe

    def __iter__(self):  # allows  chosen, rejected = filter_actions(...)
        return iter((self.chosen, self.rejected))


def safety_score(world: World, ego_id: str, action, cfg: SafetyConfig) -> float:
    """Minimum projected TTC (s) for ego taking `action` now, or ttc_cap."""
    i = world.index[ego_id]
    if world.crashed[i] or world.departed[i]:
        raise ValueError(f"ego {ego_id!r} is not active")
    action = MetaAction(action)
    (x, v, acc, lane, prev_lane, dual, tspeed, kind, mission, crashed, departed,
     odo, length, P, road, lc_enabled, cooldown, changed) = world.clone_arrays()
    av_req = np.zeros(world.n_vehicles, dtype=np.int64)
    if action == MetaAction.ACCELERATE:
        tspeed[i] = min(tspeed[i] + ACCEL_STEP, kernels.V_CAP)
    elif action == MetaAction.DECELERATE:
        tspeed[i] = max(tspeed[i] - ACCEL_STEP, 0.0)
    elif action == MetaAction.CHANGE_RIGHT:
        av_req[i] = 1
    elif action == MetaAction.CHANGE_LEFT:
        av_req[i] = -1
    n_sub = int(round(world.decision_dt / world.dt))
    score = kernels.project_ttc(
        x, v, acc, lane, prev_lane, dual, tspeed, kind, mission, crashed,
        departed, odo, length, P, road, lc_enabled, cooldown, changed, av_req,
        i, cfg.n_steps, n_sub, world.dt, cfg.ttc_cap,
    )
    return float(score)


def action_scores(world: World, ego_id: str, cfg: SafetyConfig) -> np.ndarray:
    return np.array([safety_score(world, ego_id, a, cfg) for a in range(N_ACTIONS)])


def filter_actions(world: World, ego_id: str, q_values, cfg: SafetyConfig,
                   mode: str = "test", rng: np.random.Generator | None = None,
                   epsilon: float = 0.0) -> FilterResult:
    """Masked action selection per the train/test rules.

    q_values: length-5 action values of the current policy. In train mode
    one exploration coin (prob. epsilon) selects uniformly, re-drawn over the
    safe subset when the raw pick is masked; test mode is greedy over the
    safe subset. All-unsafe falls back to the highest safety score.
    """
    mode = mode.lower()
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be train or test, got {mode!r}")
    q_values = np.asarray(q_values, dtype=np.float64)
    if q_values.shape != (N_ACTIONS,):
        raise ValueError("q_values must have shape (5,)")
    scores = action_scores(world, ego_id, cfg)
    safe = scores >= cfg.safe_th
    rejected = [(MetaAction(a), float(scores[a])) for a in range(N_ACTIONS) if not safe[a]]

    explore = False
    if mode == "train" and epsilon > 0.0:
        if rng is None:
            raise ValueError("train mode needs an rng")
        explore = rng.random() < epsilon
        raw = MetaAction(int(rng.integers(N_ACTIONS))) if explore \
            else MetaAction(int(np.argmax(q_values)))
    else:
        raw = MetaAction(int(np.argmax(q_values)))

    raw_unsafe = not safe[int(raw)]
    fallback = False
    if not raw_unsafe:
        chosen = raw
    elif safe.any():
        idx = np.flatnonzero(safe)
        if explore:
            chosen = MetaAction(int(rng.choice(idx)))
        else:
            chosen = MetaAction(int(idx[np.argmax(q_values[idx])]))
    else:
        fallback = True
        chosen = MetaAction(int(np.argmax(scores)))
    return FilterResult(chosen=chosen, rejected=rejected, scores=scores,
                        raw=raw, raw_was_unsafe=raw_unsafe, fallback=fallback)
