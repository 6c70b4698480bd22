"""Compact feed-forward Q-function with manual backprop and Adam.

Holds an online and a target weight set; the target is refreshed from the
online weights every `target_update` accepted gradient steps. Checkpoints
are a small versioned binary: magic, JSON header (topology, step count,
config hash), then flat float32 arrays per layer (online then target).
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"SHQC"
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _init_layers(dims, rng):
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        layers.append([w, b])
    return layers


class QFunction:
    """MLP with rectifier hidden layers and a linear 5-action head."""

    def __init__(self, input_dim, hidden=(256, 128), n_actions=5, lr=5e-4,
                 target_update=300, seed=0):
        self.dims = (int(input_dim), *[int(h) for h in hidden], int(n_actions))
        self.lr = float(lr)
        self.target_update = int(target_update)
        rng = np.random.default_rng(seed)
        self.online = _init_layers(self.dims, rng)
        self.target = [[w.copy(), b.copy()] for w, b in self.online]
        self.m = [[np.zeros_like(w), np.zeros_like(b)] for w, b in self.online]
        self.v = [[np.zeros_like(w), np.zeros_like(b)] for w, b in self.online]
        self.step_count = 0
        self.rejected_steps = 0

    @property
    def n_actions(self):
        return self.dims[-1]

    @property
    def input_dim(self):
        return self.dims[0]

    def copy_weights(self):
        """Immutable-by-convention snapshot of the online weights."""
        return [[w.copy(), b.copy()] for w, b in self.online]

    def sync_target(self):
        self.target = [[w.copy(), b.copy()] for w, b in self.online]


def forward(weights, x):
    """Forward pass through a weight list; x is (D,) or (B, D)."""
    single = x.ndim == 1
    h = x[None, :] if single else x
    last = len(weights) - 1
    for li, (w, b) in enumerate(weights):
        h = h @ w + b
        if li != last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def q_forward(qf: QFunction, state):
    """Action values of the online network for one state or a batch."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape[-1] != qf.input_dim:
        raise ValueError(f"state dim {state.shape[-1]} != network input {qf.input_dim}")
    return forward(qf.online, state)


def _forward_cached(weights, x):
    """Forward keeping pre-activations for backprop."""
    acts = [x]
    zs = []
    h = x
    last = len(weights) - 1
    for li, (w, b) in enumerate(weights):
        z = h @ w + b
        zs.append(z)
        h = np.maximum(z, 0.0) if li != last else z
        acts.append(h)
    return h, acts, zs


@dataclass
class Batch:
    """Replay minibatch in array form."""

    states: np.ndarray        # (B, D)
    actions: np.ndarray       # (B,) int
    rewards: np.ndarray       # (B,)
    next_states: np.ndarray   # (B, D); rows of terminal samples are ignored
    terminal: np.ndarray      # (B,) bool
    unsafe: np.ndarray        # (B,) bool

    def __len__(self):
        return self.states.shape[0]


def ddqn_target(batch: Batch, online, target, gamma: float) -> np.ndarray:
    """Per-sample targets: r + gamma * Q_target(s', argmax_a Q_online(s', a)).

    Terminal and unsafe samples bootstrap nothing: target = reward (the
    unsafe penalty is already the stored reward).
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    out = batch.rewards.astype(np.float64).copy()
    live = ~(batch.terminal | batch.unsafe)
    if np.any(live):
        nxt = batch.next_states[live]
        a_star = np.argmax(forward(online, nxt), axis=1)
        q_t = forward(target, nxt)
        out[live] += gamma * q_t[np.arange(a_star.size), a_star]
    return out


def loss_and_grad(qf: QFunction, batch: Batch, gamma: float):
    """Mean squared Bellman error and its gradient w.r.t. online weights."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    targets = ddqn_target(batch, qf.online, qf.target, gamma)
    x = batch.states.astype(np.float64)
    preds_all, acts, zs = _forward_cached(qf.online, x)
    rows = np.arange(len(batch))
    preds = preds_all[rows, batch.actions]
    err = preds - targets
    loss = float(np.mean(err ** 2))

    delta = np.zeros_like(preds_all)
    delta[rows, batch.actions] = 2.0 * err / len(batch)
    grads = [None] * len(qf.online)
    for li in range(len(qf.online) - 1, -1, -1):
        h_in = acts[li]
        grads[li] = [h_in.T @ delta, delta.sum(axis=0)]
        if li > 0:
            delta = (delta @ qf.online[li][0].T) * (zs[li - 1] > 0.0)
    return loss, grads


def optimizer_step(qf: QFunction, grads) -> bool:
    """Adam update of the online weights; target sync on schedule.

    Returns False (and counts a rejection) without touching any state when
    the gradient contains non-finite values.
    """
    for gw, gb in grads:
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            qf.rejected_steps += 1
            return False
    qf.step_count += 1
    t = qf.step_count
    for li, (gw, gb) in enumerate(grads):
        for slot, g in ((0, gw), (1, gb)):
            qf.m[li][slot] = ADAM_BETA1 * qf.m[li][slot] + (1 - ADAM_BETA1) * g
            qf.v[li][slot] = ADAM_BETA2 * qf.v[li][slot] + (1 - ADAM_BETA2) * g * g
            mhat = qf.m[li][slot] / (1 - ADAM_BETA1 ** t)
            vhat = qf.v[li][slot] / (1 - ADAM_BETA2 ** t)
            qf.online[li][slot] -= qf.lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
    if qf.step_count % qf.target_update == 0:
        qf.sync_target()
    return True


def config_hash(obj) -> str:
    """Stable short hash of a JSON-serializable config."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(qf: QFunction, path, cfg_hash: str = "", meta: dict | None = None):
    header = {
        "topology": list(qf.dims),
        "step": qf.step_count,
        "config_hash": cfg_hash,
        "lr": qf.lr,
        "target_update": qf.target_update,
        "meta": meta or {},
    }
    hblob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(hblob)))
        fh.write(hblob)
        for weights in (qf.online, qf.target):
            for w, b in weights:
                fh.write(np.ascontiguousarray(w, dtype=np.float32).tobytes())
                fh.write(np.ascontiguousarray(b, dtype=np.float32).tobytes())


def load_checkpoint(path) -> QFunction:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError("not a Q-function checkpoint")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        dims = header["topology"]
        qf = QFunction(dims[0], hidden=dims[1:-1], n_actions=dims[-1],
                       lr=header.get("lr", 5e-4),
                       target_update=header.get("target_update", 300))
        qf.step_count = int(header.get("step", 0))
        for weights in (qf.online, qf.target):
            for li, (w, b) in enumerate(weights):
                w_raw = np.frombuffer(fh.read(w.size * 4), dtype=np.float32)
                b_raw = np.frombuffer(fh.read(b.size * 4), dtype=np.float32)
                weights[li][0] = w_raw.reshape(w.shape).astype(np.float64)
                weights[li][1] = b_raw.astype(np.float64)
    qf.loaded_header = header
    return qf
