"""Closed-form asymptotic performance of grant-free access with AMP
activity detection and MRC/ZF receive beamforming.

All probabilities are clamped to ``[0, 1]`` and every function of the
active-user count ``k`` accepts real or array-valued ``k``. Whenever
``k >= L`` (AMP cannot operate) the miss probability and the symbol error
rate are both 1; ZF additionally fails when ``k >= M``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import erfc, logsumexp

from .errors import DegenerateDistribution, OutOfRange
from .model import SystemConfig

# Subnormal or zero pmf values are recomputed in log space.
TAIL_PMF = np.finfo(float).tiny


class Beamformer(str, enum.Enum):
    MRC = "MRC"
    ZF = "ZF"

    @classmethod
    def parse(cls, value) -> "Beamformer":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise OutOfRange("beamformer", f"unknown beamformer {value!r}") from None


@dataclass(frozen=True)
class RegimePoint:
    """Operating point at which the per-user probabilities are evaluated."""

    k: float
    L: int
    epsilon: float
    beamformer: Beamformer

    def __post_init__(self):
        if self.k < 0:
            raise OutOfRange("k", "k must be >= 0")
        if self.L < 1:
            raise OutOfRange("L", "L must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise OutOfRange("epsilon", "epsilon must lie in [0, 1]")
        object.__setattr__(self, "beamformer", Beamformer.parse(self.beamformer))


@dataclass(frozen=True)
class SstrPoint:
    """SSTR (symbols per coherence interval) at one ``(L, epsilon)``."""

    L: int
    epsilon: float
    value: float
    method: str
    half_width: float = 0.0


def q_function(x):
    """Gaussian tail probability ``Q(x) = P(Z > x)``."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def log_binomial_pmf(N: int, lam: float, k):
    """Log of the binomial pmf for integer ``k``.

    The pmf itself is accurate to a few ulps wherever it is a normal float;
    only subnormal or underflowed values are taken from ``logpmf``.
    """
    k = np.asarray(k, dtype=float)
    pmf = stats.binom.pmf(k, N, lam)
    with np.errstate(divide="ignore"):
        out = np.log(pmf)
    tail = pmf < TAIL_PMF
    if np.any(tail):
        if k.ndim:
            out[tail] = stats.binom.logpmf(k[tail], N, lam)
        else:
            out = stats.binom.logpmf(k, N, lam)
    return out


def binomial_pmf(N: int, lam: float, k):
    """Probability of exactly ``k`` active users out of ``N``."""
    if not 0.0 <= lam <= 1.0:
        raise OutOfRange("lambda", f"activation probability must lie in [0, 1], got {lam}")
    k_arr = np.asarray(k)
    if np.any(k_arr < 0) or np.any(k_arr > N):
        raise OutOfRange("k", f"k must lie in [0, {N}]")
    return np.exp(log_binomial_pmf(N, lam, k_arr))


def _snr_span(k, L, gamma, sigma2):
    return gamma * (L - np.asarray(k, dtype=float)) / sigma2


def b_factor(k, L, gamma, sigma2):
    """``log(1 + x) / x`` with ``x = gamma (L - k) / sigma2``."""
    x = _snr_span(k, L, gamma, sigma2)
    if np.any(x <= 0):
        raise OutOfRange("k", "b_factor requires k < L")
    return np.log1p(x) / x


def _log_miss(b, M):
    u = b - 1.0
    d = u - np.log1p(u)
    with np.errstate(divide="ignore"):
        bracket = 1.0 / (1.0 - b) + 1.0 / np.sqrt(2.0 * d)
        return -M * d - math.log(2.0 * math.sqrt(2.0 * math.pi * M)) + np.log(bracket)


def miss_probability(k, L, M, gamma, sigma2):
    """Asymptotic probability that an active user is declared inactive.

    Evaluated in log space; the large-deviation factor underflows at
    practical antenna counts and is then reported as 0.
    """
    k = np.asarray(k, dtype=float)
    out = np.ones(k.shape)
    ok = k < L
    if np.any(ok):
        b = b_factor(k[ok], L, gamma, sigma2)
        out[ok] = np.exp(np.minimum(_log_miss(b, M), 0.0))
    return out if out.ndim else float(out)


def _sinr_unchecked(beamformer, k, L, M, gamma, sigma2):
    if beamformer is Beamformer.MRC:
        return M * gamma**2 / ((gamma + sigma2 / (L - k)) * (k * gamma + sigma2))
    return (M - k) * (L - k) * gamma**2 / (sigma2 * (gamma * L + sigma2))


def sinr(beamformer, k, L, M, gamma, sigma2):
    """Large-system SINR of a correctly detected active user."""
    bf = Beamformer.parse(beamformer)
    k = np.asarray(k, dtype=float)
    if np.any(k >= L):
        raise OutOfRange("k", "SINR requires k < L")
    if bf is Beamformer.ZF and np.any(k >= M):
        raise OutOfRange("k", "ZF SINR requires k < M")
    out = _sinr_unchecked(bf, k, L, M, gamma, sigma2)
    return out if np.ndim(out) else float(out)


def ser_from_sinr(W: int, g):
    """Symbol error rate of minimum-distance W-PSK detection at SINR ``g``."""
    g = np.maximum(np.asarray(g, dtype=float), 0.0)
    if W == 2:
        out = q_function(np.sqrt(2.0 * g))
    elif W == 4:
        q = q_function(np.sqrt(g))
        out = 2.0 * q - q * q
    else:
        raise OutOfRange("W", f"W must be 2 or 4, got {W}")
    return np.clip(out, 0.0, 1.0)


def ser(beamformer, W, k, L, M, gamma, sigma2):
    bf = Beamformer.parse(beamformer)
    k = np.asarray(k, dtype=float)
    out = np.ones(k.shape)
    ok = k < L
    if bf is Beamformer.ZF:
        ok &= k < M
    if np.any(ok):
        g = _sinr_unchecked(bf, k[ok], L, M, gamma, sigma2)
        out[ok] = ser_from_sinr(W, g)
    return out if out.ndim else float(out)


def success_probability(k, L, config: SystemConfig, beamformer):
    """``(1 - p(k, L)) (1 - psi(k, L))`` for a typical active user."""
    p = miss_probability(k, L, config.M, config.gamma, config.sigma2)
    psi = ser(beamformer, config.W, k, L, config.M, config.gamma, config.sigma2)
    return (1.0 - np.asarray(p)) * (1.0 - np.asarray(psi))


def evaluate(point: RegimePoint, config: SystemConfig):
    """Return ``(p, psi)`` at ``point``."""
    p = miss_probability(point.k, point.L, config.M, config.gamma, config.sigma2)
    psi = ser(point.beamformer, config.W, point.k, point.L, config.M, config.gamma, config.sigma2)
    return float(p), float(psi)


def _check_point(L, epsilon, config):
    if not 1 <= L <= config.T - 1:
        raise OutOfRange("L", f"L must lie in [1, {config.T - 1}], got {L}")
    if not 0.0 <= epsilon <= 1.0:
        raise OutOfRange("epsilon", f"epsilon must lie in [0, 1], got {epsilon}")


def _support(L, N):
    return np.arange(1, min(N, L - 1) + 1, dtype=float)


def sstr_exact(L: int, epsilon: float, config: SystemConfig, beamformer) -> SstrPoint:
    """Asymptotic SSTR summed over the binomial number of active users.

    Terms with ``k >= L`` vanish, so the sum stops at ``min(N, L - 1)``.
    """
    _check_point(L, epsilon, config)
    lam = config.p_a * epsilon
    ks = _support(L, config.N)
    value = 0.0
    if ks.size and lam > 0:
        q = np.exp(log_binomial_pmf(config.N, lam, ks))
        value = float(np.sum(ks * q * success_probability(ks, L, config, beamformer)))
        value *= (config.T - L) / config.T
    return SstrPoint(L, epsilon, value, "exact")


def conditional_sstr(k: int, L: int, config: SystemConfig, beamformer) -> float:
    """Expected successful symbols per interval given exactly ``k`` active users."""
    if not 1 <= L <= config.T - 1:
        raise OutOfRange("L", f"L must lie in [1, {config.T - 1}], got {L}")
    succ = float(success_probability(k, L, config, beamformer))
    return (config.T - L) / config.T * k * succ


def _truncated_moments(L, N, lam):
    ks = _support(L, N)
    if ks.size == 0 or lam <= 0:
        raise DegenerateDistribution("no probability mass on 1 <= k < L")
    logq = log_binomial_pmf(N, lam, ks)
    if not np.any(np.isfinite(logq)):
        raise DegenerateDistribution("no probability mass on 1 <= k < L")
    log_mass = logsumexp(logq)
    log_first = logsumexp(logq + np.log(ks))
    return log_mass, log_first


def k_bar(L: int, N: int, lam: float) -> float:
    """Mean number of active users restricted to ``1 <= k < L``."""
    log_mass, log_first = _truncated_moments(L, N, lam)
    return float(np.exp(log_first - log_mass))


def sstr_mean_approx(L: int, epsilon: float, config: SystemConfig, beamformer) -> SstrPoint:
    """SSTR with the per-user success probability frozen at the truncated mean."""
    _check_point(L, epsilon, config)
    lam = config.p_a * epsilon
    log_mass, log_first = _truncated_moments(L, config.N, lam)
    kbar = float(np.exp(log_first - log_mass))
    succ = float(success_probability(kbar, L, config, beamformer))
    value = (config.T - L) / config.T * succ * float(np.exp(log_first))
    return SstrPoint(L, epsilon, value, "mean_approx")
