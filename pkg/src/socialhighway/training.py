"""Semi-sequential multi-agent DDQN training loop with safety masking.

All AVs share one Q-function. Each decision tick the active agent acts
epsilon-greedy from the online weights while its peers act greedily from the
frozen snapshot w-; after n_iterations ticks the snapshot is re-broadcast
from the online weights and the active role rotates. Masked-out raw actions
are stored as terminal experiences with the unsafe penalty. The first
prestore_episodes episodes only fill the replay buffer.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .observe import GridSpec, StackedState, flatten_state, render_velocity_map
from .qnet import QFunction, forward, loss_and_grad, optimizer_step
from .replay import (Experience, ReplayBuffer, classify_stratum, replay_sample)
from .reward import RewardConfig, agent_reward
from .safety import SafetyConfig, filter_actions
from .world import ScenarioConfig, build_scenario


@dataclass
class EpsilonSchedule:
    """Linear decay from eps0 to eps_final over horizon steps, then flat."""

    eps0: float = 1.0
    eps_final: float = 0.05
    horizon: int = 30000

    def value(self, step: int) -> float:
        if step < 0:
            raise ValueError("step must be >= 0")
        frac = min(step / self.horizon, 1.0) if self.horizon > 0 else 1.0
        return self.eps0 + (self.eps_final - self.eps0) * frac


def epsilon(step: int, schedule: EpsilonSchedule) -> float:
    return schedule.value(step)


@dataclass
class LearnerConfig:
    hidden: tuple = (256, 128)
    gamma: float = 0.95
    lr: float = 0.0005
    batch_size: int = 32
    buffer_capacity: int = 8000
    target_update: int = 300
    n_iterations: int = 200          # decision ticks per freeze window
    prestore_episodes: int = 50
    episodes: int = 600
    updates_per_tick: int = 1
    eps0: float = 1.0
    eps_final: float = 0.05
    eps_horizon_frac: float = 0.8
    history: int = 4
    pool_lat: int = 4
    pool_lon: int = 4
    grid_lat: int = 16
    grid_lon: int = 64
    grid_range: float = 120.0

    def grid_spec(self) -> GridSpec:
        return GridSpec(lat_cells=self.grid_lat, lon_cells=self.grid_lon,
                        lon_range=self.grid_range)

    @property
    def pool(self):
        return (self.pool_lat, self.pool_lon)

    def input_dim(self) -> int:
        return (self.history * 5 * (self.grid_lat // self.pool_lat)
                * (self.grid_lon // self.pool_lon))

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        return d


def make_qfunction(lcfg: LearnerConfig, seed: int = 0) -> QFunction:
    return QFunction(lcfg.input_dim(), hidden=tuple(lcfg.hidden), lr=lcfg.lr,
                     target_update=lcfg.target_update, seed=seed)


@dataclass
class EpisodeResult:
    crashed: bool
    mission_accomplished: bool
    mission_failed: bool
    distance: float          # mean AV odometer [m]
    reward_sum: float        # mean per-AV return
    interventions: int       # ticks where the mask replaced the raw action
    ticks: int
    seed: int
    done_reason: str


def _mean_av_distance(world) -> float:
    idx = [world.index[a] for a in world.av_ids()]
    return float(np.mean(world.odo[idx])) if idx else 0.0


def run_episode(world, weights_for, scfg: SafetyConfig, rcfg: RewardConfig,
                grid: GridSpec, pool, history, rng, mode="test",
                epsilon_for=None, on_transition=None, seed=0) -> EpisodeResult:
    """Roll one episode to termination.

    weights_for(av_id) -> weight list used for that agent this tick;
    epsilon_for(av_id) -> exploration rate (train mode only);
    on_transition(av_id, state, action, reward, next_state, parts, info) is
    invoked for completed transitions and for masked unsafe raw actions
    (info["unsafe"] True, next_state None).
    """
    stacks = {a: StackedState(history, a) for a in world.av_ids()}
    pending = {}
    returns = {a: 0.0 for a in world.av_ids()}
    interventions = 0
    ticks = 0
    while not world.done:
        alive = world.av_ids(alive_only=True)
        inputs = {}
        for a in alive:
            obs = render_velocity_map(world, a, grid)
            stacks[a] = stacks[a].push(obs)
            inputs[a] = flatten_state(stacks[a], pool)
        for a, (s, act, r, parts) in list(pending.items()):
            if a in inputs and on_transition is not None:
                on_transition(a, s, act, r, inputs[a], parts, {"unsafe": False})
            pending.pop(a)
        actions = {}
        for a in alive:
            w = weights_for(a)
            q = forward(w, inputs[a])
            eps = epsilon_for(a) if (mode == "train" and epsilon_for) else 0.0
            res = filter_actions(world, a, q, scfg, mode=mode, rng=rng, epsilon=eps)
            if res.chosen != res.raw:
                interventions += 1
            if res.raw_was_unsafe and on_transition is not None:
                on_transition(a, inputs[a], int(res.raw), rcfg.r_unsafe, None,
                              {"crashed": False, "mission_event": False},
                              {"unsafe": True})
            actions[a] = res.chosen
        world.step(actions)
        ticks += 1
        for a in alive:
            r, parts = agent_reward(world, a, rcfg)
            returns[a] += r
            i = world.index[a]
            finished = world.done or world.crashed[i] or world.departed[i]
            if finished:
                if on_transition is not None:
                    on_transition(a, inputs[a], int(actions[a]), r, None, parts,
                                  {"unsafe": False})
            else:
                pending[a] = (inputs[a], int(actions[a]), r, parts)

    mv = world.mission_vehicle_id()
    accomplished = False
    if mv is not None:
        accomplished = int(world.mission_state[world.index[mv]]) == 1
    return EpisodeResult(
        crashed=bool(world.crashed.any()),
        mission_accomplished=accomplished,
        mission_failed=(mv is not None and not accomplished),
        distance=_mean_av_distance(world),
        reward_sum=float(np.mean(list(returns.values()))) if returns else 0.0,
        interventions=interventions,
        ticks=ticks,
        seed=seed,
        done_reason=world.done_reason or "",
    )


@dataclass
class TrainResult:
    qf: QFunction
    log: list = field(default_factory=list)   # per-episode dict rows
    gradient_steps: int = 0
    broadcasts: int = 0


LOG_FIELDS = ("episode", "return", "crashes", "mission", "epsilon", "loss")


def train_marl(scenario: ScenarioConfig, lcfg: LearnerConfig, rcfg: RewardConfig,
               scfg: SafetyConfig, seed: int = 0, behavior_table=None,
               init_qf: QFunction | None = None, progress=None) -> TrainResult:
    """Run the full training schedule and return the trained Q-function.

    Deterministic under (configs, seed). init_qf warm-starts from an existing
    network (transfer learning); it must match the configured topology.
    """
    ss = np.random.SeedSequence(seed)
    s_net, s_explore, s_replay, s_world = ss.spawn(4)
    qf = init_qf if init_qf is not None else make_qfunction(lcfg, seed=s_net)
    if qf.input_dim != lcfg.input_dim():
        raise ValueError("warm-start network does not match the configured input")
    rng_explore = np.random.default_rng(s_explore)
    rng_replay = np.random.default_rng(s_replay)
    episode_seeds = np.random.default_rng(s_world).integers(0, 2 ** 31, size=lcfg.episodes)

    buffer = ReplayBuffer(lcfg.buffer_capacity)
    expected_ticks = scenario.horizon / scenario.decision_dt
    schedule = EpsilonSchedule(
        lcfg.eps0, lcfg.eps_final,
        horizon=max(1, int(lcfg.eps_horizon_frac * lcfg.episodes * expected_ticks)),
    )
    grid = lcfg.grid_spec()
    w_minus = qf.copy_weights()
    state = {"tick": 0, "active": 0, "grad_steps": 0, "broadcasts": 0, "losses": []}
    result = TrainResult(qf=qf)

    for ep in range(lcfg.episodes):
        world = build_scenario(scenario.kind, scenario.n_avs, scenario.n_hvs,
                               scenario.behavior_mix, seed=int(episode_seeds[ep]),
                               cfg=scenario, behavior_table=behavior_table,
                               svo_phi=rcfg.phi)
        av_order = world.av_ids()
        prestore = ep < lcfg.prestore_episodes
        state["losses"] = []

        def on_transition(a, s, act, r, s_next, parts, info):
            if info["unsafe"]:
                exp = Experience(s, act, r, None, terminal=True, unsafe=True)
                buffer.add(exp, classify_stratum(exp))
            else:
                exp = Experience(s, act, r, s_next, terminal=s_next is None)
                buffer.add(exp, classify_stratum(exp, crashed=parts["crashed"],
                                                 mission_event=parts["mission_event"]))

        def weights_for(a):
            if prestore:
                return w_minus
            if a == av_order[state["active"] % len(av_order)]:
                return qf.online
            return w_minus

        def epsilon_for(a):
            if prestore:
                return 1.0
            if a == av_order[state["active"] % len(av_order)]:
                return schedule.value(state["tick"])
            return 0.0

        grad_steps_before = state["grad_steps"]

        def tick_hook():
            state["tick"] += 1
            if not prestore and len(buffer) >= lcfg.batch_size:
                for _ in range(lcfg.updates_per_tick):
                    batch = replay_sample(buffer, lcfg.batch_size, rng_replay)
                    loss, grads = loss_and_grad(qf, batch, lcfg.gamma)
                    if not math.isfinite(loss):
                        raise FloatingPointError(f"non-finite loss at episode {ep}")
                    optimizer_step(qf, grads)
                    state["grad_steps"] += 1
                    state["losses"].append(loss)
            if not prestore and state["tick"] % lcfg.n_iterations == 0:
                w_minus[:] = qf.copy_weights()
                state["active"] += 1
                state["broadcasts"] += 1

        res = _run_training_episode(world, weights_for, epsilon_for, scfg, rcfg,
                                    grid, lcfg, rng_explore, on_transition, tick_hook,
                                    seed=int(episode_seeds[ep]))
        row = {
            "episode": ep,
            "return": res.reward_sum,
            "crashes": int(res.crashed),
            "mission": int(res.mission_accomplished),
            "epsilon": schedule.value(state["tick"]),
            "loss": float(np.mean(state["losses"])) if state["losses"] else float("nan"),
            "interventions": res.interventions,
            "distance": res.distance,
            "gradient_steps": state["grad_steps"] - grad_steps_before,
        }
        result.log.append(row)
        if progress is not None:
            progress(row)
    result.gradient_steps = state["grad_steps"]
    result.broadcasts = state["broadcasts"]
    return result


def _run_training_episode(world, weights_for, epsilon_for, scfg, rcfg, grid, lcfg,
                          rng, on_transition, tick_hook, seed) -> EpisodeResult:
    """run_episode with a per-tick learning hook spliced in."""
    stacks = {a: StackedState(lcfg.history, a) for a in world.av_ids()}
    pending = {}
    returns = {a: 0.0 for a in world.av_ids()}
    interventions = 0
    ticks = 0
    while not world.done:
        alive = world.av_ids(alive_only=True)
        inputs = {}
        for a in alive:
            obs = render_velocity_map(world, a, grid)
            stacks[a] = stacks[a].push(obs)
            inputs[a] = flatten_state(stacks[a], lcfg.pool)
        for a, (s, act, r, parts) in list(pending.items()):
            if a in inputs:
                on_transition(a, s, act, r, inputs[a], parts, {"unsafe": False})
            pending.pop(a)
        actions = {}
        for a in alive:
            q = forward(weights_for(a), inputs[a])
            res = filter_actions(world, a, q, scfg, mode="train", rng=rng,
                                 epsilon=epsilon_for(a))
            if res.chosen != res.raw:
                interventions += 1
            if res.raw_was_unsafe:
                on_transition(a, inputs[a], int(res.raw), rcfg.r_unsafe, None,
                              {"crashed": False, "mission_event": False},
                              {"unsafe": True})
            actions[a] = res.chosen
        world.step(actions)
        ticks += 1
        for a in alive:
            r, parts = agent_reward(world, a, rcfg)
            returns[a] += r
            i = world.index[a]
            if world.done or world.crashed[i] or world.departed[i]:
                on_transition(a, inputs[a], int(actions[a]), r, None, parts,
                              {"unsafe": False})
            else:
                pending[a] = (inputs[a], int(actions[a]), r, parts)
        tick_hook()

    mv = world.mission_vehicle_id()
    accomplished = mv is not None and int(world.mission_state[world.index[mv]]) == 1
    return EpisodeResult(
        crashed=bool(world.crashed.any()),
        mission_accomplished=accomplished,
        mission_failed=(mv is not None and not accomplished),
        distance=_mean_av_distance(world),
        reward_sum=float(np.mean(list(returns.values()))) if returns else 0.0,
        interventions=interventions,
        ticks=ticks,
        seed=seed,
        done_reason=world.done_reason or "",
    )


def smoothed_mission_rate(log, window: int = 100) -> list:
    """Trailing-window mean of the per-episode mission flag."""
    vals = [row["mission"] for row in log]
    out = []
    for i in range(len(vals)):
        lo = max(0, i - window + 1)
        out.append(float(np.mean(vals[lo:i + 1])))
    return out
