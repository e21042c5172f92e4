"""Maximisation of the analytic SSTR over the access probability and the
pilot length.

For fixed ``L`` the SSTR is the signomial ``sum_k f_k eps^k (1 - p_a eps)^(N-k)``.
With ``t = 1 - p_a eps`` relaxed to ``p_a eps + t <= 1`` the problem becomes
the maximisation of a posynomial, solved by complementary geometric
programming: condense the posynomial into its AM-GM monomial lower bound at
the current point, maximise that monomial exactly, repeat.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln, logsumexp, xlogy

from .analytic import sstr_exact, sstr_mean_approx, success_probability
from .errors import DegenerateDistribution, NoConvergence, OutOfRange
from .model import SystemConfig, rng_stream

CGP_STREAM = 0xC6
# Coefficients below this fraction of the largest one are dropped.
LOG_DROP = math.log(1e-300)


@dataclass
class OptResult:
    epsilon_opt: Optional[float]
    L_opt: Optional[int]
    value: float
    method: str
    diagnostics: dict = field(default_factory=dict)


def _check_L(L, config):
    if not 1 <= L <= config.T - 1:
        raise OutOfRange("L", f"L must lie in [1, {config.T - 1}], got {L}")


def log_signomial_coefficients(L: int, config: SystemConfig, beamformer) -> np.ndarray:
    """``log f(k, L)`` for ``k = 1..N`` (``-inf`` where the coefficient is 0)."""
    _check_L(L, config)
    N = config.N
    ks = np.arange(1, N + 1, dtype=float)
    out = np.full(N, -np.inf)
    live = ks < L
    if not np.any(live) or config.p_a == 0.0:
        return out
    k = ks[live]
    with np.errstate(divide="ignore"):
        log_succ = np.log(success_probability(k, L, config, beamformer))
    out[live] = (math.log((config.T - L) / config.T)
                 + gammaln(N + 1.0) - gammaln(k + 1.0) - gammaln(N - k + 1.0)
                 + k * math.log(config.p_a) + np.log(k) + log_succ)
    return out


def signomial_coefficients(L: int, config: SystemConfig, beamformer) -> np.ndarray:
    """``f(k, L)`` for ``k = 1..N``; may overflow to ``inf`` for large ``N p_a``,
    use :func:`log_signomial_coefficients` for computation."""
    return np.exp(log_signomial_coefficients(L, config, beamformer))


def _terms(L, config, beamformer):
    logf = log_signomial_coefficients(L, config, beamformer)
    keep = np.isfinite(logf)
    if np.any(keep):
        keep &= logf >= logf[keep].max() + LOG_DROP
    ks = np.flatnonzero(keep) + 1.0
    return ks, logf[keep]


def _log_objective(eps, t, ks, logf, N):
    if ks.size == 0:
        return -np.inf
    return float(logsumexp(logf + xlogy(ks, eps) + xlogy(N - ks, t)))


def signomial_objective(eps: float, L: int, config: SystemConfig, beamformer, t=None) -> float:
    """``sum_k f(k, L) eps^k t^(N-k)``; ``t`` defaults to ``1 - p_a eps``."""
    ks, logf = _terms(L, config, beamformer)
    if t is None:
        t = 1.0 - config.p_a * eps
    return math.exp(_log_objective(eps, t, ks, logf, config.N))


def optimize_epsilon_grid(L: int, config: SystemConfig, beamformer, grid_size: int = 1001) -> OptResult:
    """Grid search of the exact SSTR over ``eps`` with local refinement."""
    if grid_size < 3:
        raise OutOfRange("grid_size", "grid_size must be >= 3")
    _check_L(L, config)
    grid = np.linspace(0.0, 1.0, grid_size)

    def phi(e):
        return sstr_exact(L, float(e), config, beamformer).value

    values = np.array([phi(e) for e in grid])
    i = int(np.argmax(values))
    best_eps, best_val = float(grid[i]), float(values[i])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_size - 1)]
    res = minimize_scalar(lambda e: -phi(e), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-7})
    if -res.fun > best_val:
        best_eps, best_val = float(res.x), float(-res.fun)
    return OptResult(best_eps, L, best_val, "grid",
                     {"grid_size": grid_size, "evaluations": grid_size + int(res.nfev)})


def monomial_argmax(a: float, N: int, p_a: float) -> float:
    """Maximiser of ``eps^a t^(N-a)`` on ``{p_a eps + t <= 1, 0 <= eps <= 1}``.

    The constraint is active, and on ``t = 1 - p_a eps`` the log-objective is
    concave with its peak at ``eps = a / (N p_a)``.
    """
    return min(1.0, a / (N * p_a))


def _cgp_run(eps, ks, logf, N, p_a, max_iter, tol):
    """Condensation iterations from ``eps``; returns ``(eps, log_value, history, converged)``."""
    history = []
    rest = N - ks
    for _ in range(max_iter + 1):
        t = 1.0 - p_a * eps
        logu = logf + ks * math.log(eps) + xlogy(rest, t)
        m = logu.max()
        # AM-GM weights: each term's share of the posynomial at (eps, t).
        w = np.exp(logu - m)
        total = w.sum()
        log_val = m + math.log(total)
        if history and abs(math.expm1(log_val - history[-1])) < tol:
            history.append(log_val)
            return eps, log_val, history, True
        history.append(log_val)
        eps = monomial_argmax(float(np.dot(w, ks)) / total, N, p_a)
    return eps, _log_objective(eps, 1.0 - p_a * eps, ks, logf, N), history, False


def optimize_epsilon_cgp(L: int, config: SystemConfig, beamformer, restarts: int = 10,
                         seed: Optional[int] = None, max_iter: int = 20000, tol: float = 1e-9,
                         strict: bool = False) -> OptResult:
    """Best stationary point of the CGP iteration over random feasible starts.

    With ``strict`` an iteration cap hit raises :class:`NoConvergence`;
    otherwise the best iterate is returned with ``diagnostics["converged"]``
    set to ``False``.
    """
    if restarts < 1:
        raise OutOfRange("restarts", "restarts must be >= 1")
    _check_L(L, config)
    ks, logf = _terms(L, config, beamformer)
    N, p_a = config.N, config.p_a
    if ks.size == 0:
        return OptResult(0.0, L, 0.0, "cgp", {"iterations": 0, "restarts": restarts,
                                              "converged": True, "slack": 0.0})
    rng = rng_stream(config.seed if seed is None else seed, CGP_STREAM, L)
    best = None
    total_iters = 0
    all_converged = True
    for _ in range(restarts):
        eps0 = float(rng.uniform(0.0, 1.0))
        while eps0 == 0.0:
            eps0 = float(rng.uniform(0.0, 1.0))
        eps, log_val, history, ok = _cgp_run(eps0, ks, logf, N, p_a, max_iter, tol)
        total_iters += len(history) - 1
        all_converged &= ok
        if best is None or log_val > best[1]:
            best = (eps, log_val, history, eps0)
    eps, log_val, history, eps0 = best
    t = 1.0 - p_a * eps
    diag = {"iterations": total_iters, "restarts": restarts, "converged": all_converged,
            "start": eps0, "t": t, "slack": 1.0 - (p_a * eps + t),
            "history": [math.exp(h) for h in history]}
    result = OptResult(eps, L, math.exp(log_val), "cgp", diag)
    if strict and not all_converged:
        raise NoConvergence(f"CGP hit the iteration cap at L={L}", best=result)
    return result


def _length_value(L, epsilon, config, beamformer, use_mean_approx):
    if use_mean_approx:
        try:
            return sstr_mean_approx(L, epsilon, config, beamformer).value
        except DegenerateDistribution:
            return 0.0
    return sstr_exact(L, epsilon, config, beamformer).value


def optimize_length(epsilon: float, config: SystemConfig, beamformer,
                    use_mean_approx: bool = True) -> OptResult:
    """Exhaustive search over ``L = 1..T-1``; ties go to the smaller ``L``."""
    if not 0.0 <= epsilon <= 1.0:
        raise OutOfRange("epsilon", f"epsilon must lie in [0, 1], got {epsilon}")
    Ls = np.arange(1, config.T)
    values = np.array([_length_value(int(L), epsilon, config, beamformer, use_mean_approx)
                       for L in Ls])
    i = int(np.argmax(values))
    method = "exhaustive_mean_approx" if use_mean_approx else "exhaustive_exact"
    return OptResult(epsilon, int(Ls[i]), float(values[i]), method,
                     {"curve": values.tolist()})


def optimize_joint(config: SystemConfig, beamformer, restarts: int = 10, seed: Optional[int] = None,
                   threads: int = 1) -> OptResult:
    """``max_L g(L)`` with ``g(L)`` from CGP; a grid search replaces CGP at any
    ``L`` where it did not converge."""
    Ls = list(range(1, config.T))

    def g(L):
        res = optimize_epsilon_cgp(L, config, beamformer, restarts=restarts, seed=seed)
        if not res.diagnostics["converged"]:
            res = optimize_epsilon_grid(L, config, beamformer)
        return res

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_L = list(pool.map(g, Ls))
    else:
        per_L = [g(L) for L in Ls]
    values = np.array([r.value for r in per_L])
    i = int(np.argmax(values))
    best = per_L[i]
    eps = best.epsilon_opt if best.value > 0 else 0.0
    fallbacks = sum(r.method == "grid" for r in per_L)
    return OptResult(eps, Ls[i], float(values[i]), "joint",
                     {"restarts": restarts, "grid_fallbacks": fallbacks, "g": values.tolist()})
