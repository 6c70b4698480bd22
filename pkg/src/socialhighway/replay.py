"""Experience replay with stratified, skew-compensating sampling.

Experiences are tagged at insert time as crash/unsafe, mission-event, or
ordinary. Eviction at capacity removes the oldest ordinary experience
first, then mission, then unsafe, so penalized pairs are never dropped
before ordinary ones of the same age. Sampling draws 25/25/50 percent from
the three strata, redistributing a short stratum's quota proportionally.
"""

from dataclasses import dataclass

import numpy as np

from .qnet import Batch

STRATUM_UNSAFE = 0
STRATUM_MISSION = 1
STRATUM_ORDINARY = 2

SAMPLE_FRACTIONS = {STRATUM_UNSAFE: 0.25, STRATUM_MISSION: 0.25, STRATUM_ORDINARY: 0.5}


@dataclass
class Experience:
    """One transition; unsafe entries are terminal with the penalty reward."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray | None   # None marks a terminal next state
    terminal: bool = False
    unsafe: bool = False

    def __post_init__(self):
        if self.unsafe and (self.next_state is not None or not self.terminal):
            raise ValueError("unsafe experiences must be terminal with no next state")
        if self.next_state is None:
            self.terminal = True


def classify_stratum(exp: Experience, crashed: bool = False, mission_event: bool = False) -> int:
    if exp.unsafe or crashed:
        return STRATUM_UNSAFE
    if mission_event:
        return STRATUM_MISSION
    return STRATUM_ORDINARY


class ReplayBuffer:
    """Capacity-bounded store with per-stratum FIFO order."""

    def __init__(self, capacity: int = 8000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.strata = {STRATUM_UNSAFE: [], STRATUM_MISSION: [], STRATUM_ORDINARY: []}
        self._seq = 0

    def __len__(self):
        return sum(len(v) for v in self.strata.values())

    def counts(self):
        return {k: len(v) for k, v in self.strata.items()}

    def add(self, exp: Experience, stratum: int | None = None):
        if stratum is None:
            stratum = classify_stratum(exp)
        self.strata[stratum].append(exp)
        self._seq += 1
        if len(self) > self.capacity:
            for s in (STRATUM_ORDINARY, STRATUM_MISSION, STRATUM_UNSAFE):
                if self.strata[s]:
                    self.strata[s].pop(0)
                    break

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        return replay_sample(self, batch_size, rng)


def _stratum_counts(buffer: ReplayBuffer, batch_size: int) -> dict:
    """Target draw counts per stratum, shortfalls redistributed proportionally."""
    avail = buffer.counts()
    counts = {s: 0 for s in SAMPLE_FRACTIONS}
    remaining = batch_size
    active = {s: f for s, f in SAMPLE_FRACTIONS.items() if avail[s] > counts[s]}
    while remaining > 0 and active:
        total_f = sum(active.values())
        want = {}
        for s, f in active.items():
            want[s] = int(np.floor(remaining * f / total_f))
        # hand out floor remainders deterministically, largest fraction first
        leftover = remaining - sum(want.values())
        order = sorted(active, key=lambda s: (-(remaining * active[s] / total_f - want[s]), s))
        for s in order[:leftover]:
            want[s] += 1
        progressed = False
        for s, w in want.items():
            take = min(w, avail[s] - counts[s])
            if take > 0:
                counts[s] += take
                remaining -= take
                progressed = True
        active = {s: f for s, f in SAMPLE_FRACTIONS.items() if avail[s] > counts[s]}
        if not progressed and not active:
            break
    return counts


def replay_sample(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> Batch:
    """Stratified minibatch (without replacement inside each stratum)."""
    if len(buffer) < batch_size:
        raise ValueError(f"buffer holds {len(buffer)} < batch size {batch_size}")
    counts = _stratum_counts(buffer, batch_size)
    picks = []
    for s in (STRATUM_UNSAFE, STRATUM_MISSION, STRATUM_ORDINARY):
        pool = buffer.strata[s]
        k = counts[s]
        if k == 0:
            continue
        idx = rng.choice(len(pool), size=k, replace=False)
        picks.extend(pool[int(i)] for i in idx)

    dim = picks[0].state.shape[0]
    b = len(picks)
    states = np.zeros((b, dim))
    nexts = np.zeros((b, dim))
    actions = np.zeros(b, dtype=np.int64)
    rewards = np.zeros(b)
    terminal = np.zeros(b, dtype=bool)
    unsafe = np.zeros(b, dtype=bool)
    for i, e in enumerate(picks):
        states[i] = e.state
        actions[i] = e.action
        rewards[i] = e.reward
        terminal[i] = e.terminal
        unsafe[i] = e.unsafe
        if e.next_state is not None:
            nexts[i] = e.next_state
    return Batch(states=states, actions=actions, rewards=rewards,
                 next_states=nexts, terminal=terminal, unsafe=unsafe)
