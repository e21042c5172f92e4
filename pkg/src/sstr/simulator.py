"""Monte-Carlo simulation of one coherence interval and the empirical SSTR.

A trial draws activity, pilots, channels and noise, runs AMP on the pilot
observation, beamforms the data observation with the estimated channels of
the detected users and detects one PSK symbol per active user. One symbol is
enough: per-symbol errors are identically distributed within an interval.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import amp
from .analytic import Beamformer, SstrPoint
from .errors import InsufficientTrials, OutOfRange, ShapeMismatch, ZfUnavailable
from .model import (
    ActivityVector,
    ChannelSet,
    PilotBook,
    SystemConfig,
    complex_normal,
    draw_activity,
    draw_channels,
    draw_fixed_activity,
    draw_pilots,
    power_control,
    rng_stream,
)

TRIAL_STREAM = 0x7A
PILOT_BOOK_STREAM = 0x9B
ZF_MAX_CONDITION = 1e10


@dataclass(frozen=True)
class TrialOutcome:
    """Result of one simulated coherence interval.

    ``symbol_correct`` is the SSTR indicator. ``decoded_correct`` is what the
    receiver actually achieved; the two differ only on overloaded intervals
    (``K >= L``) when ``SystemConfig.overload_fails`` is set.
    """

    alpha: np.ndarray
    alpha_hat: np.ndarray
    symbol_correct: np.ndarray
    L: int
    epsilon: float
    decoded_correct: Optional[np.ndarray] = None
    overloaded: bool = False
    zf_failed: bool = False

    @property
    def K(self) -> int:
        return int(np.sum(self.alpha))

    @property
    def successes(self) -> int:
        return int(np.sum(self.symbol_correct))

    @property
    def missed(self) -> int:
        return int(np.sum((self.alpha == 1) & (self.alpha_hat == 0)))


@dataclass
class SstrCurve:
    sweep_name: str
    trials: int
    points: List[SstrPoint] = field(default_factory=list)


def psk_constellation(W: int) -> np.ndarray:
    """Unit-energy W-PSK points; QPSK is rotated onto the diagonals."""
    if W not in (2, 4):
        raise OutOfRange("W", f"W must be 2 or 4, got {W}")
    offset = 0.0 if W == 2 else math.pi / W
    return np.exp(1j * (2.0 * math.pi * np.arange(W) / W + offset))


def min_distance_detect(r, gain, W: int) -> np.ndarray:
    """Index of the constellation point ``c`` minimising ``|r - gain c|``.

    Exact ties (to relative 1e-12) go to the lowest index.
    """
    pts = psk_constellation(W)
    r = np.asarray(r, dtype=complex)
    gain = np.asarray(gain, dtype=complex)
    d = np.abs(r[..., None] - gain[..., None] * pts) ** 2
    dmin = d.min(axis=-1, keepdims=True)
    tol = 1e-12 * np.maximum(dmin, np.abs(r[..., None]) ** 2 + 1e-300)
    return np.argmax(d <= dmin + tol, axis=-1)


def pilot_phase(rng, config: SystemConfig, pilots: PilotBook, activity: ActivityVector,
                channels: ChannelSet) -> np.ndarray:
    A = pilots.A
    L, N = A.shape
    if N != config.N or activity.alpha.shape != (N,) or channels.H.shape != (config.M, N):
        raise ShapeMismatch("pilot phase inputs disagree on N or M")
    act = np.flatnonzero(activity.alpha)
    scale = np.sqrt(L * power_control(channels.gains[act], config.gamma))
    Y = A[:, act] @ (scale[:, None] * channels.H[:, act].T)
    return Y + complex_normal(rng, (L, config.M), config.sigma2)


def data_phase(rng, config: SystemConfig, activity: ActivityVector, channels: ChannelSet,
               symbols) -> np.ndarray:
    """Received data vector for one symbol time; ``symbols`` has length N."""
    symbols = np.asarray(symbols)
    if symbols.shape != (config.N,) or channels.H.shape != (config.M, config.N):
        raise ShapeMismatch("data phase inputs disagree on N or M")
    act = np.flatnonzero(activity.alpha)
    amp_ = np.sqrt(power_control(channels.gains[act], config.gamma))
    y = channels.H[:, act] @ (amp_ * symbols[act])
    return y + complex_normal(rng, config.M, config.sigma2)


def beamformers(G_hat, kind) -> np.ndarray:
    """Receive combiners for the detected users (columns of ``G_hat``)."""
    kind = Beamformer.parse(kind)
    G = np.asarray(G_hat, dtype=complex)
    if kind is Beamformer.MRC:
        return G
    M, K = G.shape
    if K == 0:
        return G
    if K >= M:
        raise ZfUnavailable(f"ZF needs fewer detected users than antennas ({K} >= {M})")
    gram = G.conj().T @ G
    if np.linalg.cond(gram) > ZF_MAX_CONDITION:
        raise ZfUnavailable("Gram matrix of estimated channels is ill-conditioned")
    return np.linalg.solve(gram, G.conj().T).conj().T


def detect_symbols(y_data, U_hat, H_hat, config: SystemConfig, users=None) -> np.ndarray:
    """Minimum-distance symbol decisions for the beamformed users.

    ``users`` gives the user index of each column (for per-user powers);
    without it all users are taken to have unit gain.
    """
    U = np.asarray(U_hat)
    H = np.asarray(H_hat)
    if U.shape != H.shape:
        raise ShapeMismatch(f"U_hat {U.shape} and H_hat {H.shape} differ")
    gains = config.user_gains()
    g = gains[np.asarray(users)] if users is not None else np.ones(U.shape[1])
    rho = power_control(g, config.gamma) if g.size else g
    r = U.conj().T @ np.asarray(y_data)
    ref = np.sqrt(rho) * np.einsum("mk,mk->k", U.conj(), H)
    return min_distance_detect(r, ref, config.W)


def awgn_symbol_errors(rng, W: int, sinr: float, n_symbols: int) -> int:
    """Errors of minimum-distance detection of ``n_symbols`` unit-energy PSK
    symbols in complex Gaussian noise of variance ``1 / sinr``."""
    pts = psk_constellation(W)
    sent = rng.integers(0, W, n_symbols)
    r = pts[sent] + complex_normal(rng, n_symbols, 1.0 / sinr)
    return int(np.count_nonzero(min_distance_detect(r, np.ones(n_symbols), W) != sent))


def _pilot_book(rng, config, L):
    if config.fixed_pilots:
        return draw_pilots(rng_stream(config.seed, PILOT_BOOK_STREAM, L), config.N, L)
    return draw_pilots(rng, config.N, L)


def simulate_interval(rng: np.random.Generator, config: SystemConfig, L: int, epsilon: float,
                      beamformer_kinds: Iterable = (Beamformer.MRC, Beamformer.ZF),
                      k: Optional[int] = None) -> Dict[Beamformer, TrialOutcome]:
    """One coherence interval decoded with several beamformers.

    The pilot phase and AMP are shared; with ``k`` set the interval has
    exactly ``k`` active users and AMP uses ``k / N`` as its prior.
    """
    if not 1 <= L <= config.T - 1:
        raise OutOfRange("L", f"L must lie in [1, {config.T - 1}], got {L}")
    if not 0.0 <= epsilon <= 1.0:
        raise OutOfRange("epsilon", f"epsilon must lie in [0, 1], got {epsilon}")
    kinds = [Beamformer.parse(b) for b in beamformer_kinds]
    r_act, r_pil, r_ch, r_pn, r_sym, r_dn = rng.spawn(6)

    if k is None:
        activity = draw_activity(r_act, config, epsilon)
        lam = config.p_a * epsilon
    else:
        activity = draw_fixed_activity(r_act, config.N, k)
        lam = k / config.N
    alpha = activity.alpha
    N = config.N

    if activity.K == 0 and lam == 0.0:
        zero = np.zeros(N, np.int8)
        return {b: TrialOutcome(alpha, zero, zero, L, epsilon, zero) for b in kinds}

    pilots = _pilot_book(r_pil, config, L)
    channels = draw_channels(r_ch, config)
    Y = pilot_phase(r_pn, config, pilots, activity, channels)
    est = amp.run(Y, pilots, config, epsilon, lam=lam)
    alpha_hat = est.detected
    users = est.detected_users

    sent = r_sym.integers(0, config.W, N)
    symbols = psk_constellation(config.W)[sent]
    y = data_phase(r_dn, config, activity, channels, symbols)
    overloaded = config.overload_fails and activity.K >= L

    out = {}
    for kind in kinds:
        decoded = np.zeros(N, np.int8)
        zf_failed = False
        if users.size:
            try:
                U = beamformers(est.H_hat, kind)
            except ZfUnavailable:
                zf_failed = True
            else:
                s_hat = detect_symbols(y, U, est.H_hat, config, users)
                ok = (s_hat == sent[users]) & (alpha[users] == 1)
                decoded[users[ok]] = 1
        correct = np.zeros(N, np.int8) if overloaded else decoded
        out[kind] = TrialOutcome(alpha, alpha_hat, correct, L, epsilon, decoded,
                                 overloaded, zf_failed)
    return out


def run_trial(rng, config: SystemConfig, L: int, epsilon: float, beamformer,
              k: Optional[int] = None) -> TrialOutcome:
    kind = Beamformer.parse(beamformer)
    return simulate_interval(rng, config, L, epsilon, (kind,), k)[kind]


def trial_rng(config: SystemConfig, index: int) -> np.random.Generator:
    return rng_stream(config.seed, TRIAL_STREAM, index)


def run_trials(config: SystemConfig, L: int, epsilon: float, trials: int,
               beamformer_kinds: Sequence = (Beamformer.MRC, Beamformer.ZF),
               k: Optional[int] = None, threads: int = 1,
               start: int = 0) -> Dict[Beamformer, List[TrialOutcome]]:
    """Independent trials ``start .. start + trials - 1``.

    Trial ``i`` always uses the stream ``(seed, i)``, so results do not depend
    on ``threads`` or on scheduling order.
    """
    kinds = [Beamformer.parse(b) for b in beamformer_kinds]

    def one(i):
        return simulate_interval(trial_rng(config, i), config, L, epsilon, kinds, k)

    indices = range(start, start + trials)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, indices))
    else:
        results = [one(i) for i in indices]
    return {b: [r[b] for r in results] for b in kinds}


def _mean_and_half_width(values):
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise InsufficientTrials(f"need at least 2 trials, got {values.size}")
    half = 1.96 * values.std(ddof=1) / math.sqrt(values.size)
    return float(values.mean()), float(half)


def empirical_sstr(trials: Sequence[TrialOutcome], T: int, physical: bool = False) -> SstrPoint:
    """Sample estimate of the SSTR with a 95% normal confidence half-width.

    ``physical`` counts what the receiver decoded even on overloaded
    intervals instead of the SSTR indicator.
    """
    trials = list(trials)
    if len(trials) < 2:
        raise InsufficientTrials(f"need at least 2 trials, got {len(trials)}")
    L, eps = trials[0].L, trials[0].epsilon
    if any(t.L != L or t.epsilon != eps for t in trials):
        raise OutOfRange("trials", "trials must share the same (L, epsilon)")
    counts = [np.sum(t.decoded_correct if physical else t.symbol_correct) for t in trials]
    mean, half = _mean_and_half_width(counts)
    factor = (T - L) / T
    return SstrPoint(L, eps, factor * mean, "monte_carlo", factor * half)


def conditional_success_rate(trials: Sequence[TrialOutcome], T: int):
    """Per-active-user success rate scaled by ``(T - L) / T``, with half-width.

    Meant for trials conditioned on a fixed number of active users.
    """
    trials = list(trials)
    L = trials[0].L
    rates = [t.successes / t.K for t in trials if t.K > 0]
    mean, half = _mean_and_half_width(rates)
    factor = (T - L) / T
    return factor * mean, factor * half
