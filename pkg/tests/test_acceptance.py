"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the terminal
summary. The Monte-Carlo criteria (2 and 3) take several minutes each.
"""

import math

import mpmath as mp
import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from scipy.special import erfc

from sstr import amp
from sstr.analytic import (
    Beamformer,
    binomial_pmf,
    conditional_sstr,
    q_function,
    ser_from_sinr,
    sstr_exact,
    sstr_mean_approx,
)
from sstr.model import SystemConfig, complex_normal, rng_stream
from sstr.optimizer import (
    optimize_epsilon_cgp,
    optimize_epsilon_grid,
    optimize_joint,
    signomial_objective,
)
from sstr.simulator import awgn_symbol_errors, conditional_success_rate, empirical_sstr, run_trials

BFS = (Beamformer.MRC, Beamformer.ZF)


def reference_config(**kw):
    args = dict(N=2000, M=128, T=200, p_a=0.1, W=4)
    args.update(kw)
    return SystemConfig.from_snr_db(10.0, **args)


def test_criterion_1_genie_ser(record):
    n = 1_000_000
    # 0.5: low SINR; 1.27: MRC level; 25.4: ZF level at k=100, L=110, M=128
    worst = 0.0
    for W in (2, 4):
        for i, g in enumerate((0.5, 1.27, 25.4)):
            errors = awgn_symbol_errors(rng_stream(1, W, i), W, g, n)
            psi = float(ser_from_sinr(W, g))
            se = math.sqrt(psi * (1 - psi) / n)
            z = abs(errors / n - psi) / se if se > 0 else (0.0 if errors == 0 else math.inf)
            worst = max(worst, z)
    ok = worst <= 3.0
    record(1, ok, f"max |SER_mc - SER| = {worst:.2f} standard errors (limit 3)")
    assert ok


@pytest.mark.slow
def test_criterion_2_conditional_rate_vs_antennas(record):
    trials = 200
    lines, ok = [], True
    for M in (64, 128, 256):
        cfg = reference_config(M=M)
        results = run_trials(cfg, 110, 1.0, trials, BFS, k=100)
        for bf in BFS:
            mc, _ = conditional_success_rate(results[bf], cfg.T)
            analytic = conditional_sstr(100, 110, cfg, bf) / 100
            tol = max(0.05 * abs(analytic), 0.02)
            ok &= abs(mc - analytic) <= tol
            lines.append(f"M={M} {bf.value}: mc {mc:.4f} vs {analytic:.4f}")
        missed = sum(t.missed for t in results[Beamformer.MRC])
        lines.append(f"M={M} missed detections {missed}/{100 * trials}")
    record(2, ok, "; ".join(lines))
    assert ok


@pytest.mark.slow
def test_criterion_3_sstr_vs_monte_carlo(record):
    cfg = reference_config()
    lines, ok = [], True
    for eps in (0.2, 0.5, 0.8):
        results = run_trials(cfg, 110, eps, 100, BFS)
        for bf in BFS:
            mc = empirical_sstr(results[bf], cfg.T)
            analytic = sstr_exact(110, eps, cfg, bf).value
            tol = max(0.10 * abs(analytic), mc.half_width)
            good = abs(analytic - mc.value) <= tol
            ok &= good
            lines.append(f"eps={eps} {bf.value}: mc {mc.value:.4g}+-{mc.half_width:.2g} "
                         f"vs {analytic:.4g}{'' if good else ' (out)'}")
    record(3, ok, "; ".join(lines))
    assert ok


def test_criterion_4_mean_approximation(record):
    cfg = reference_config()
    Ls = np.arange(60, 181)
    worst, shifts = 0.0, []
    for bf in BFS:
        exact = np.array([sstr_exact(int(L), 0.5, cfg, bf).value for L in Ls])
        approx = np.array([sstr_mean_approx(int(L), 0.5, cfg, bf).value for L in Ls])
        worst = max(worst, float(np.max(np.abs(approx - exact) / exact)))
        shifts.append(abs(int(Ls[np.argmax(approx)]) - int(Ls[np.argmax(exact)])))
    ok = worst <= 0.02 and max(shifts) <= 5
    record(4, ok, f"max relative gap {worst:.3%} (limit 2%), argmax shift {max(shifts)} (limit 5)")
    assert ok


def test_criterion_5_cgp_vs_grid(record):
    rng = rng_stream(5, 5)
    worst_gap, worst_slack = -math.inf, 0.0
    for _ in range(20):
        cfg = SystemConfig.from_snr_db(
            float(rng.uniform(5, 15)), N=int(rng.integers(200, 2001)),
            M=int(rng.integers(32, 257)), T=200, p_a=float(rng.uniform(0.02, 0.2)))
        L = int(rng.integers(10, 190))
        bf = BFS[int(rng.integers(2))]
        cgp = optimize_epsilon_cgp(L, cfg, bf, restarts=10)
        grid = optimize_epsilon_grid(L, cfg, bf)
        worst_gap = max(worst_gap, (grid.value - cgp.value) / grid.value)
        worst_slack = max(worst_slack, abs(cgp.diagnostics["slack"]))
    ok = worst_gap <= 1e-3 and worst_slack <= 1e-8
    record(5, ok, f"worst (grid - cgp)/grid = {worst_gap:.2e} (limit 1e-3), "
                  f"max slack {worst_slack:.1e} (limit 1e-8)")
    assert ok


def _row_resolution_loss(cfg, bf, L, eps_grid, row):
    """How far the best grid point of one row lies below the row's continuous
    maximum, found by bounded refinement between the neighbouring grid points."""
    j = int(np.argmax(row))
    lo, hi = eps_grid[max(j - 1, 0)], eps_grid[min(j + 1, len(eps_grid) - 1)]
    res = minimize_scalar(lambda e: -sstr_exact(L, float(e), cfg, bf).value, bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-9})
    return max(-res.fun - row[j], 0.0)


def test_criterion_6_joint_vs_brute_force(record):
    rng = rng_stream(6, 6)
    step = 0.01
    eps_grid = np.round(np.arange(0.0, 1.0 + step / 2, step), 2)
    lines, ok = [], True
    for _ in range(5):
        cfg = SystemConfig.from_snr_db(
            float(rng.uniform(5, 15)), N=int(rng.integers(200, 2001)),
            M=int(rng.integers(32, 257)), T=int(rng.integers(50, 201)),
            p_a=float(rng.uniform(0.02, 0.2)))
        bf = BFS[int(rng.integers(2))]
        Ls = np.arange(1, cfg.T)
        table = np.array([[sstr_exact(int(L), float(e), cfg, bf).value for e in eps_grid]
                          for L in Ls])
        i, j = np.unravel_index(np.argmax(table), table.shape)
        brute = table[i, j]
        joint = optimize_joint(cfg, bf)
        # The joint value cannot exceed the continuous maximum of its own row,
        # which lies at most ``delta`` above that row's best grid point.
        delta = _row_resolution_loss(cfg, bf, joint.L_opt, eps_grid, table[joint.L_opt - 1])
        cell = np.abs(eps_grid - joint.epsilon_opt) <= step + 1e-12
        near = table[joint.L_opt - 1, cell].max()
        good = (brute <= joint.value * (1 + 1e-9)
                # 1e-10: agreement of the signomial and direct evaluations
                and joint.value - brute <= delta * (1 + 1e-6) + 1e-10 * joint.value
                and near >= brute - delta)
        ok &= good
        lines.append(f"joint (L={joint.L_opt}, eps={joint.epsilon_opt:.3f}) "
                     f"grid (L={Ls[i]}, eps={eps_grid[j]:.2f}) gap {joint.value - brute:.1e}"
                     f" <= {delta:.1e}")
    record(6, ok, "; ".join(lines))
    assert ok


def test_criterion_7_numerical_identities(record):
    ks = np.arange(2001)
    mass_err = abs(float(binomial_pmf(2000, 0.05, ks).sum()) - 1.0)

    # Relative error wherever both pmf values are normal doubles; subnormal
    # values cannot carry 1e-12 relative precision, so they are held to the
    # absolute reading of the tolerance.
    rng = rng_stream(7, 7)
    count_err, count_abs, normal = 0.0, 0.0, 0
    tiny = np.finfo(float).tiny
    for _ in range(100):
        N = int(rng.integers(1, 2001))
        k = int(rng.integers(1, N + 1))
        lam = float(rng.uniform(0.0, 1.0))
        q_prev, q = binomial_pmf(N - 1, lam, k - 1), binomial_pmf(N, lam, k)
        lhs, rhs = N * lam * q_prev, k * q
        if min(q_prev, q) >= tiny:
            normal += 1
            count_err = max(count_err, abs(lhs - rhs) / rhs)
        else:
            count_abs = max(count_abs, abs(lhs - rhs))

    x = np.linspace(-8, 8, 16001)
    q_err = float(np.max(np.abs(q_function(x) - 0.5 * erfc(x / math.sqrt(2)))))
    mp.mp.dps = 30
    q_mp = max(abs(float(q_function(v)) - float(mp.erfc(mp.mpf(v) / mp.sqrt(2)) / 2))
               for v in np.linspace(-8, 8, 161))

    cfg = reference_config()
    sig_err = 0.0
    for bf in BFS:
        for eps in rng.uniform(0.01, 1.0, 20):
            want = sstr_exact(110, float(eps), cfg, bf).value
            got = signomial_objective(float(eps), 110, cfg, bf)
            sig_err = max(sig_err, abs(got - want) / want)

    ok = (mass_err <= 1e-9 and count_err <= 1e-12 and count_abs <= 1e-12
          and max(q_err, q_mp) <= 1e-12 and sig_err <= 1e-10)
    record(7, ok, f"mass {mass_err:.1e}, counting {count_err:.1e} relative over {normal} "
                  f"normal-range tuples ({count_abs:.1e} absolute otherwise), "
                  f"Q {max(q_err, q_mp):.1e}, signomial {sig_err:.1e}")
    assert ok


def _bayes_mean(r, tau2, L, gamma, lam):
    P = mp.mpf(L) * gamma
    s = mp.fsum(mp.mpf(abs(complex(v))) ** 2 for v in r)
    d1 = mp.exp(-s / (P + tau2)) / (mp.pi * (P + tau2)) ** len(r)
    d0 = mp.exp(-s / tau2) / (mp.pi * tau2) ** len(r)
    post = lam * d1 / (lam * d1 + (1 - lam) * d0)
    return np.array([complex(post * P / (P + tau2) * mp.mpc(v)) for v in r])


@pytest.mark.slow
def test_criterion_8_denoiser_and_detection(record):
    mp.mp.dps = 40
    rng = rng_stream(8, 8)
    worst = 0.0
    for _ in range(100):
        tau2 = float(rng.uniform(0.05, 5.0))
        lam = float(rng.uniform(0.01, 0.99))
        L = int(rng.integers(2, 50))
        gamma = float(rng.uniform(0.1, 10.0))
        r = complex_normal(rng, 4, float(rng.choice([tau2, tau2 + L * gamma])))
        x_hat, _, _ = amp.denoise(r, tau2, L, gamma, lam)
        worst = max(worst, float(np.max(np.abs(x_hat - _bayes_mean(r, tau2, L, gamma, lam)))))

    rates = []
    for M in (2, 4, 8, 16):
        cfg = SystemConfig.from_snr_db(0.0, N=20, M=M, T=40, p_a=0.1)
        trials = run_trials(cfg, 16, 1.0, 500, (Beamformer.MRC,), k=2)[Beamformer.MRC]
        rates.append(sum(t.missed for t in trials) / (2 * len(trials)))
    monotone = all(a > b for a, b in zip(rates, rates[1:]))
    ok = worst <= 1e-10 and monotone
    record(8, ok, f"denoiser max error {worst:.1e} (limit 1e-10); missed detection at 0 dB "
                  f"for M=2,4,8,16: {', '.join(f'{r:.4f}' for r in rates)}")
    assert ok
