"""Human-driver models: IDM car following, MOBIL lane changes, behavior presets.

The three named presets (aggressive / moderate / conservative) realize the
lateral and longitudinal trait ranges used across the experiments; the
"typical" bundle is the textbook single-behavior parameterization.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import kernels

AGGRESSIVE = "aggressive"
MODERATE = "moderate"
CONSERVATIVE = "conservative"
CUSTOM = "custom"

PRESET_LABELS = (AGGRESSIVE, MODERATE, CONSERVATIVE)


@dataclass(frozen=True)
class BehaviorParams:
    """IDM + MOBIL parameter bundle for one driving style."""

    v0: float = 30.0          # desired speed [m/s]
    T0: float = 1.5           # safe time gap [s]
    d0: float = 2.0           # minimum distance [m]
    a_max: float = 1.0        # comfortable max acceleration [m/s^2]
    a_des: float = 1.5        # comfortable deceleration [m/s^2]
    delta: float = 4.0        # acceleration exponent
    politeness: float = 0.5   # MOBIL sin(phi_e), in [0, 1]
    delta_a_th: float = 0.1   # incentive threshold [m/s^2]
    b_safe: float = 4.0       # safe deceleration limit [m/s^2]
    label: str = CUSTOM

    def __post_init__(self):
        if self.v0 <= 0 or self.d0 <= 0 or self.a_max <= 0 or self.a_des <= 0 or self.b_safe <= 0:
            raise ValueError("v0, d0, a_max, a_des, b_safe must be positive")
        if self.T0 < 0:
            raise ValueError("T0 must be >= 0")
        if not 0.0 <= self.politeness <= 1.0:
            raise ValueError("politeness must lie in [0, 1]")

    def as_row(self) -> np.ndarray:
        """Parameter row in the kernel column order."""
        return np.array(
            [self.v0, self.T0, self.d0, self.a_max, self.a_des, self.delta,
             self.politeness, self.delta_a_th, self.b_safe],
            dtype=np.float64,
        )

    def to_table(self) -> dict:
        """Config/serialization form, field names mirroring the preset tables."""
        return {
            "v0": self.v0,
            "T0": self.T0,
            "d0": self.d0,
            "acc_max": self.a_max,
            "acc_des": self.a_des,
            "delta": self.delta,
            "sin_phi_e": self.politeness,
            "delta_a_th": self.delta_a_th,
            "b_safe": self.b_safe,
        }

    @classmethod
    def from_table(cls, table: dict, label: str = CUSTOM) -> "BehaviorParams":
        return cls(
            v0=float(table.get("v0", 30.0)),
            T0=float(table["T0"]),
            d0=float(table["d0"]),
            a_max=float(table["acc_max"]),
            a_des=float(table["acc_des"]),
            delta=float(table.get("delta", 4.0)),
            politeness=float(table["sin_phi_e"]),
            delta_a_th=float(table["delta_a_th"]),
            b_safe=float(table["b_safe"]),
            label=label,
        )


# Estimated preset parameter sets (lateral block: sin_phi_e, delta_a_th,
# b_safe; longitudinal block: T0, d0, acc_max, acc_des). v0 = 30 m/s and
# delta = 4 throughout.
PRESETS = {
    AGGRESSIVE: BehaviorParams(
        v0=30.0, T0=0.5, d0=1.0, a_max=7.0, a_des=12.0, delta=4.0,
        politeness=0.0, delta_a_th=0.0, b_safe=12.0, label=AGGRESSIVE,
    ),
    MODERATE: BehaviorParams(
        v0=30.0, T0=1.0, d0=2.0, a_max=3.0, a_des=7.0, delta=4.0,
        politeness=0.3, delta_a_th=0.1, b_safe=6.0, label=MODERATE,
    ),
    CONSERVATIVE: BehaviorParams(
        v0=30.0, T0=3.0, d0=6.0, a_max=1.0, a_des=2.0, delta=4.0,
        politeness=1.0, delta_a_th=0.4, b_safe=2.0, label=CONSERVATIVE,
    ),
}

# Textbook single-behavior IDM values with the typical MOBIL constants.
TYPICAL = BehaviorParams(
    v0=30.0, T0=1.5, d0=2.0, a_max=1.0, a_des=1.5, delta=4.0,
    politeness=0.5, delta_a_th=0.1, b_safe=4.0, label=CUSTOM,
)


def preset(label: str) -> BehaviorParams:
    return PRESETS[label]


def load_behavior_table(section: dict) -> dict:
    """Build a preset table from a config `behaviors` section (overrides)."""
    table = dict(PRESETS)
    for label, fields in (section or {}).items():
        base = table.get(label)
        if base is not None:
            merged = base.to_table()
            merged.update(fields)
            table[label] = BehaviorParams.from_table(merged, label=label)
        else:
            table[label] = BehaviorParams.from_table(fields, label=label)
    return table


def interpolate_presets(t_lateral: float, t_longitudinal: float) -> BehaviorParams:
    """Blend conservative (t=0) to aggressive (t=1) per axis.

    The lateral axis moves the MOBIL fields, the longitudinal axis the IDM
    fields; used by the aggressiveness sensitivity sweeps.
    """
    c = PRESETS[CONSERVATIVE]
    a = PRESETS[AGGRESSIVE]

    def lerp(lo, hi, t):
        return lo + (hi - lo) * t

    return BehaviorParams(
        v0=30.0,
        T0=lerp(c.T0, a.T0, t_longitudinal),
        d0=lerp(c.d0, a.d0, t_longitudinal),
        a_max=lerp(c.a_max, a.a_max, t_longitudinal),
        a_des=lerp(c.a_des, a.a_des, t_longitudinal),
        delta=4.0,
        politeness=lerp(c.politeness, a.politeness, t_lateral),
        delta_a_th=lerp(c.delta_a_th, a.delta_a_th, t_lateral),
        b_safe=lerp(c.b_safe, a.b_safe, t_lateral),
        label=CUSTOM,
    )


def idm_desired_gap(v: float, delta_v: float, p: BehaviorParams) -> float:
    """Desired minimum gap d*(v, dv) in meters; dynamic term floored at 0."""
    if v < 0:
        raise ValueError("v must be >= 0")
    return kernels.idm_desired_gap_s(v, delta_v, p.d0, p.T0, p.a_max, p.a_des)


def idm_acceleration(v: float, delta_v: float, d: float, p: BehaviorParams,
                     clip: bool = True) -> float:
    """IDM acceleration [m/s^2] for speed v, approach rate delta_v, gap d.

    Gaps below 0.1 m are clamped rather than rejected (vehicles may overlap
    momentarily before the collision flag lands). clip bounds the output to
    [-2*a_des, a_max]; MOBIL evaluations pass clip=False so the safety
    criterion sees the raw deceleration demand.
    """
    if v < 0:
        raise ValueError("v must be >= 0")
    return kernels.idm_accel_s(v, delta_v, d, p.v0, p.T0, p.d0, p.a_max,
                               p.a_des, p.delta, clip)


def mobil_decide(a_ego: float, a_ego_new: float, a_n: float, a_n_new: float,
                 a_o: float, a_o_new: float, p: BehaviorParams) -> bool:
    """MOBIL lane-change decision from before/after accelerations.

    True (change) iff the new follower's deceleration stays above -b_safe
    and the politeness-weighted total acceleration gain exceeds delta_a_th.
    """
    return bool(kernels.mobil_ok_s(a_ego, a_ego_new, a_n, a_n_new, a_o, a_o_new,
                                   p.politeness, p.delta_a_th, p.b_safe))


class BehaviorMix:
    """Weighted distribution over behavior parameter bundles."""

    def __init__(self, entries):
        """entries: mapping label->weight or iterable of (BehaviorParams, weight)."""
        if isinstance(entries, dict):
            entries = [(PRESETS[k] if isinstance(k, str) else k, w) for k, w in entries.items()]
        entries = [(p, float(w)) for p, w in entries if float(w) != 0.0]
        if not entries:
            raise ValueError("behavior mix needs at least one positive weight")
        weights = np.array([w for _, w in entries], dtype=np.float64)
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("behavior mix weights must be nonnegative with positive sum")
        self.params = [p for p, _ in entries]
        self.probs = weights / weights.sum()

    @classmethod
    def uniform(cls, table: dict | None = None) -> "BehaviorMix":
        table = table or PRESETS
        return cls([(table[k], 1.0) for k in PRESET_LABELS])

    @classmethod
    def single(cls, label_or_params) -> "BehaviorMix":
        p = PRESETS[label_or_params] if isinstance(label_or_params, str) else label_or_params
        return cls([(p, 1.0)])

    def sample(self, rng: np.random.Generator) -> BehaviorParams:
        idx = rng.choice(len(self.params), p=self.probs)
        return self.params[idx]


def sample_behavior(mix: BehaviorMix, rng: np.random.Generator) -> BehaviorParams:
    """Draw one behavior bundle from the mix."""
    return mix.sample(rng)
