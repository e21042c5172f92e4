"""Vector AMP for joint activity detection and channel estimation.

The pilot observation is treated as ``Y = A X + Z`` where row ``n`` of ``X``
is ``sqrt(L rho_n) alpha_n h_n^T``. Under channel inversion every row has
the same Bernoulli-Gaussian prior: zero with probability ``1 - lam`` and
``CN(0, L gamma I_M)`` otherwise, so one scalar denoiser serves all users.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import OutOfRange, ShapeMismatch
from .model import PilotBook, SystemConfig, power_control, rng_stream

SE_STREAM = 0x5E


@dataclass(frozen=True)
class AmpEstimate:
    X_hat: np.ndarray
    posterior: np.ndarray
    tau2: np.ndarray
    detected: np.ndarray
    H_hat: np.ndarray
    scale: np.ndarray

    @property
    def detected_users(self) -> np.ndarray:
        return np.flatnonzero(self.detected)


def _posterior(s, tau2, P, lam, M):
    """P(active | ||r||^2 = s) for 0 < lam < 1, via the log-odds."""
    kappa = P / (tau2 * (P + tau2))
    log_odds = math.log(lam) - math.log1p(-lam) - M * math.log1p(P / tau2) + kappa * s
    return expit(log_odds)


def denoise(r, tau2, L, gamma, lam):
    """MMSE denoiser for one or many rows observed in ``CN(0, tau2)`` noise.

    Returns ``(x_hat, posterior, divergence)``; the last two are per row.
    ``divergence`` is the mean diagonal of the (Wirtinger) Jacobian.
    """
    if not tau2 > 0:
        raise OutOfRange("tau2", f"tau2 must be positive, got {tau2}")
    if not 0.0 <= lam <= 1.0:
        raise OutOfRange("lambda", f"activation probability must lie in [0, 1], got {lam}")
    r = np.asarray(r)
    M = r.shape[-1]
    s = np.sum(r.real**2 + r.imag**2, axis=-1)
    P = L * gamma
    beta = P / (P + tau2)
    if lam == 0.0:
        zeros = np.zeros(s.shape)
        return np.zeros_like(r), zeros, zeros
    if lam == 1.0:
        ones = np.ones(s.shape)
        return beta * r, ones, beta * ones
    phi = _posterior(s, tau2, P, lam, M)
    kappa = P / (tau2 * (P + tau2))
    x_hat = (beta * phi)[..., None] * r
    div = beta * (phi + kappa * s * phi * (1.0 - phi) / M)
    return x_hat, phi, div


def _row_mse(tau2, L, gamma, lam, M, g_active, g_inactive):
    """Expected squared error of one denoised row, by sampling ``||r||^2``.

    Uses the exact posterior variance given ``r`` and stratifies over the
    two hypotheses; the gamma draws are shared across calls.
    """
    if lam == 0.0:
        return 0.0
    P = L * gamma
    beta = P / (P + tau2)

    def conditional(s):
        phi = 1.0 if lam == 1.0 else _posterior(s, tau2, P, lam, M)
        return phi * beta**2 * s * (1.0 - phi) + phi * M * beta * tau2

    active = np.mean(conditional((P + tau2) * g_active))
    if lam == 1.0:
        return float(active)
    inactive = np.mean(conditional(tau2 * g_inactive))
    return float(lam * active + (1.0 - lam) * inactive)


@functools.lru_cache(maxsize=256)
def _schedule(N, M, L, gamma, sigma2, lam, iters, samples, tol, seed):
    rng = rng_stream(seed, SE_STREAM, M)
    g_active = rng.standard_gamma(M, samples)
    g_inactive = rng.standard_gamma(M, samples)
    tau2 = [sigma2 + N * lam * gamma]
    while len(tau2) < iters:
        mse = _row_mse(tau2[-1], L, gamma, lam, M, g_active, g_inactive)
        nxt = sigma2 + (N / L) * mse / M
        done = abs(nxt - tau2[-1]) <= tol * tau2[-1]
        tau2.append(nxt)
        if done:
            break
    out = np.array(tau2)
    out.setflags(write=False)
    return out


def state_evolution(config: SystemConfig, L: int, epsilon: float, lam=None) -> np.ndarray:
    """Effective noise variance predicted for each AMP iteration.

    The recursion stops early once successive values agree to
    ``config.se_tol`` (relative); at most ``config.amp_iters`` entries.
    """
    if L < 1:
        raise OutOfRange("L", f"L must be >= 1, got {L}")
    if lam is None:
        lam = config.p_a * epsilon
    return _schedule(config.N, config.M, int(L), float(config.gamma), float(config.sigma2),
                     float(lam), config.amp_iters, config.se_samples, float(config.se_tol),
                     config.seed)


def decide_activity(estimate: AmpEstimate, threshold: float = 0.5):
    """MAP hard decision and the channel estimates of detected users."""
    detected = (np.asarray(estimate.posterior) >= threshold).astype(np.int8)
    idx = np.flatnonzero(detected)
    H_hat = (estimate.X_hat[idx] / estimate.scale[idx, None]).T
    return detected, H_hat


def run(Y, pilots: PilotBook, config: SystemConfig, epsilon: float, lam=None) -> AmpEstimate:
    """Recover the row-sparse ``X`` from the pilot observation ``Y``.

    ``lam`` overrides the activation probability ``p_a * epsilon`` (used for
    experiments conditioned on the number of active users).
    """
    Y = np.asarray(Y)
    A = pilots.A
    L, N = A.shape
    if Y.ndim != 2 or Y.shape[0] != L or N != config.N or Y.shape[1] != config.M:
        raise ShapeMismatch(f"Y has shape {Y.shape}, expected ({L}, {config.M}) for pilots {A.shape}")
    if lam is None:
        lam = config.p_a * epsilon
    M = config.M
    gamma = config.gamma
    empirical = config.tau_mode == "empirical"
    if empirical:
        schedule = None
        n_iter = config.amp_iters
    else:
        schedule = state_evolution(config, L, epsilon, lam)
        n_iter = len(schedule)
    damping = config.amp_damping

    AH = A.conj().T
    X = np.zeros((N, M), dtype=complex)
    R = Y.astype(complex, copy=True)
    taus = []
    phi = np.zeros(N)
    for t in range(n_iter):
        if empirical:
            tau2 = max(float(np.vdot(R, R).real) / (L * M), 1e-12 * config.sigma2)
        else:
            tau2 = float(schedule[t])
        taus.append(tau2)
        X_new, phi, div = denoise(X + AH @ R, tau2, L, gamma, lam)
        # Damping changes the path, not the fixed point.
        X = X_new if damping == 1.0 else damping * X_new + (1.0 - damping) * X
        R = Y - A @ X + (N / L) * float(np.mean(div)) * R
        if empirical and t > 0 and abs(taus[-1] - taus[-2]) <= config.se_tol * taus[-2]:
            break

    scale = np.sqrt(L * power_control(config.user_gains(), gamma))
    est = AmpEstimate(X, phi, np.array(taus), None, None, scale)
    detected, H_hat = decide_activity(est, config.threshold)
    return dataclasses.replace(est, detected=detected, H_hat=H_hat)
