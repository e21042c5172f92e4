"""Scenario parameters, channel inversion and the random draws of one
coherence interval.

Every random quantity is drawn from a generator obtained with
:func:`rng_stream`, so a draw is a pure function of ``(seed, stream ids)``
and parallel trials never share state.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from typing import Mapping, Optional, Tuple

import numpy as np

from .errors import OutOfRange

TAU_MODES = ("state_evolution", "empirical")

def rng_stream(seed: int, *ids: int) -> np.random.Generator:
    """Independent generator for the stream addressed by ``ids``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(i) for i in ids))
    return np.random.Generator(np.random.PCG64(ss))


def complex_normal(rng: np.random.Generator, shape, var=1.0) -> np.ndarray:
    """i.i.d. CN(0, var) samples."""
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SystemConfig:
    """All scenario parameters plus the numerical controls of the simulator.

    ``gamma`` is the target receive power and ``sigma2`` the noise power,
    both linear. ``gains`` holds per-user large-scale gains; ``None`` means
    all ones, which is statistically equivalent under channel inversion.
    """

    N: int
    M: int
    T: int
    p_a: float
    gamma: float
    sigma2: float = 1.0
    W: int = 4
    amp_iters: int = 300
    se_samples: int = 20000
    seed: int = 0
    threshold: float = 0.5
    tau_mode: str = "empirical"
    se_tol: float = 1e-3
    amp_damping: float = 0.8
    fixed_pilots: bool = False
    overload_fails: bool = True
    gains: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not self.N >= 1:
            raise OutOfRange("N", f"N must be >= 1, got {self.N}")
        if not self.M >= 1:
            raise OutOfRange("M", f"M must be >= 1, got {self.M}")
        if not self.T >= 2:
            raise OutOfRange("T", f"T must be >= 2, got {self.T}")
        if not 0.0 <= self.p_a <= 1.0:
            raise OutOfRange("p_a", f"p_a must lie in [0, 1], got {self.p_a}")
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise OutOfRange("sigma2", f"sigma2 must be positive, got {self.sigma2}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise OutOfRange("gamma", f"gamma must be positive, got {self.gamma}")
        if self.W not in (2, 4):
            raise OutOfRange("W", f"W must be 2 or 4, got {self.W}")
        if not self.amp_iters >= 1:
            raise OutOfRange("amp_iters", "amp_iters must be >= 1")
        if not self.se_samples >= 1:
            raise OutOfRange("se_samples", "se_samples must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise OutOfRange("seed", "seed must be an unsigned 64-bit integer")
        if not 0.0 < self.threshold <= 1.0:
            raise OutOfRange("threshold", "threshold must lie in (0, 1]")
        if self.tau_mode not in TAU_MODES:
            raise OutOfRange("tau_mode", f"tau_mode must be one of {TAU_MODES}")
        if not 0.0 < self.amp_damping <= 1.0:
            raise OutOfRange("amp_damping", "amp_damping must lie in (0, 1]")
        if not self.se_tol >= 0:
            raise OutOfRange("se_tol", "se_tol must be >= 0")
        if self.gains is not None:
            g = tuple(float(v) for v in self.gains)
            if len(g) != self.N:
                raise OutOfRange("gains", f"expected {self.N} gains, got {len(g)}")
            if not all(v > 0 and math.isfinite(v) for v in g):
                raise OutOfRange("gains", "gains must be positive")
            object.__setattr__(self, "gains", g)

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.gamma / self.sigma2)

    @classmethod
    def from_snr_db(cls, snr_db: float, sigma2: float = 1.0, **kwargs) -> "SystemConfig":
        return cls(gamma=sigma2 * 10.0 ** (snr_db / 10.0), sigma2=sigma2, **kwargs)

    def user_gains(self) -> np.ndarray:
        if self.gains is None:
            return np.ones(self.N)
        return np.asarray(self.gains, dtype=float)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


_INT_FIELDS = {"N", "M", "T", "W", "amp_iters", "se_samples", "seed"}
_BOOL_FIELDS = {"fixed_pilots", "overload_fails"}


def validate_config(raw: Mapping) -> SystemConfig:
    """Build a :class:`SystemConfig` from a plain parameter record.

    Accepts ``snr_db`` in place of ``gamma``. Raises :class:`OutOfRange`
    naming the first offending field.
    """
    raw = dict(raw)
    known = {f.name for f in fields(SystemConfig)}
    if "snr_db" in raw:
        if "gamma" in raw:
            raise OutOfRange("snr_db", "give either gamma or snr_db, not both")
        snr_db = float(raw.pop("snr_db"))
        raw["gamma"] = float(raw.get("sigma2", 1.0)) * 10.0 ** (snr_db / 10.0)
    for key in raw:
        if key not in known:
            raise OutOfRange(key, f"unknown parameter {key!r}")
    for name in ("N", "M", "T", "p_a", "gamma"):
        if name not in raw:
            raise OutOfRange(name, f"missing required parameter {name!r}")

    kwargs = {}
    for key, value in raw.items():
        try:
            if key in _INT_FIELDS:
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError
                kwargs[key] = int(value)
            elif key in _BOOL_FIELDS:
                kwargs[key] = bool(value)
            elif key == "tau_mode":
                kwargs[key] = str(value)
            elif key == "gains":
                kwargs[key] = None if value is None else tuple(value)
            else:
                kwargs[key] = float(value)
        except (TypeError, ValueError):
            raise OutOfRange(key, f"invalid value for {key!r}: {value!r}") from None
    return SystemConfig(**kwargs)


def power_control(gains, gamma: float) -> np.ndarray:
    """Statistical channel inversion: ``rho_n = gamma / gamma_n``.

    The same power is used for pilot and data symbols.
    """
    g = np.asarray(gains, dtype=float)
    if np.any(~(g > 0)) or not np.all(np.isfinite(g)):
        raise OutOfRange("gains", "channel gains must be positive and finite")
    if not gamma > 0:
        raise OutOfRange("gamma", "gamma must be positive")
    return gamma / g


@dataclass(frozen=True)
class ActivityVector:
    alpha: np.ndarray
    K: int = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.int8)
        object.__setattr__(self, "alpha", _freeze(a))
        object.__setattr__(self, "K", int(a.sum()))


@dataclass(frozen=True)
class PilotBook:
    """Column ``n`` of ``A`` (L x N) is the pilot of user ``n``."""

    A: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _freeze(self.A))

    @property
    def L(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class ChannelSet:
    H: np.ndarray
    gains: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "H", _freeze(self.H))
        object.__setattr__(self, "gains", _freeze(np.asarray(self.gains, dtype=float)))


def draw_activity(rng: np.random.Generator, config: SystemConfig, epsilon: float) -> ActivityVector:
    if not 0.0 <= epsilon <= 1.0:
        raise OutOfRange("epsilon", f"epsilon must lie in [0, 1], got {epsilon}")
    lam = config.p_a * epsilon
    return ActivityVector(rng.random(config.N) < lam)


def draw_fixed_activity(rng: np.random.Generator, N: int, k: int) -> ActivityVector:
    """Activity with exactly ``k`` active users chosen uniformly at random.

    Used for experiments conditioned on the number of active users.
    """
    if not 0 <= k <= N:
        raise OutOfRange("k", f"k must lie in [0, {N}], got {k}")
    alpha = np.zeros(N, dtype=np.int8)
    alpha[rng.choice(N, size=k, replace=False)] = 1
    return ActivityVector(alpha)


def draw_pilots(rng: np.random.Generator, N: int, L: int) -> PilotBook:
    if L < 1:
        raise OutOfRange("L", f"L must be >= 1, got {L}")
    return PilotBook(complex_normal(rng, (L, N), 1.0 / L))


def draw_channels(rng: np.random.Generator, config: SystemConfig) -> ChannelSet:
    gains = config.user_gains()
    H = complex_normal(rng, (config.M, config.N)) * np.sqrt(gains)[None, :]
    return ChannelSet(H, gains)
