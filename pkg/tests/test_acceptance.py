"""End-to-end acceptance checks.

Every test prints one ``PASS``/``FAIL`` line with the measured quantities
(run with ``pytest tests/test_acceptance.py -s`` to see them) and then
asserts the same condition.
"""

import math
import time

import numpy as np
import pytest

from soar.bench import ExperimentSpec, fit_rate, run_matrix, spec_from_mapping
from soar.cli import load_config
from soar.filters import (DampingConfig, closed_form_solution, filter_arrays, filter_constants,
                          qualification_constant)
from soar.operator import DenseOperator
from soar.problems import (add_gaussian_noise, add_noise, build_integral_problem,
                           planted_source_problem)
from soar.solvers import (SolverConfig, euler_semi_iterative_coefficients, initial_state,
                          iteration_eigenvalues, iteration_matrix, run, step,
                          step_soar_euler)
from soar.stopping import RuleKind, StoppingRule


def verdict(number, title, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    print(f"\n{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail} "
          f"({elapsed:.2f}s, limit {limit:g}s)")
    assert ok, f"criterion {number} failed: {detail}"


def spectrum_regimes(n=200):
    spec = np.logspace(-8, 0, n)
    return {
        "overdamped": DampingConfig(4.0, 1.0, spectrum=spec),
        "underdamped": DampingConfig(1.0, 1.0, spectrum=spec),
        "critical": DampingConfig(2 * math.sqrt(spec[120]), 1.0, spectrum=spec),
    }


def test_01_stormer_verlet_second_order():
    start = time.perf_counter()
    sig = np.linspace(0.1, 1.0, 10)
    op = DenseOperator.diagonal(sig)
    y = np.cos(np.arange(10.0))
    x0 = np.ones(10)
    eta, t_end = 1.0, 5.0
    xc, vc = closed_form_solution(op, DampingConfig.from_operator(op, eta), x0, np.zeros(10),
                                  y, t_end)
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        cfg = SolverConfig("soar_sv", dt=dt, eta=eta, x0=x0).validated(op)
        s = initial_state(op, y, cfg)
        for _ in range(round(t_end / dt)):
            s = step(s, op, y, cfg)
        errs.append(max(np.abs(s.x - xc).max(), np.abs(s.v - vc).max()))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    ok = all(3.0 <= q <= 5.0 for q in ratios)
    verdict(1, "Stoermer-Verlet vs closed form", ok,
            f"errors {', '.join(f'{e:.3e}' for e in errs)}; ratios "
            f"{', '.join(f'{q:.3f}' for q in ratios)} in [3, 5]",
            time.perf_counter() - start, 1.0)


def test_02_spectral_stability():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst, dense_gap, dense_checked = 0.0, 0.0, 0
    for _ in range(200):
        n = int(rng.integers(2, 21))
        sig = np.sort(10 ** rng.uniform(-3, 1, n))[::-1]
        if rng.random() < 0.3:
            sig[-1] = 0.0                      # include a null direction
        eta = 10 ** rng.uniform(-3, 2)
        bound = min(math.sqrt(2) / sig[0], 2 / eta)
        dt = bound * rng.uniform(0.01, 1.0)
        plus, minus = iteration_eigenvalues(dt, eta, sig**2)
        mods = np.concatenate([np.abs(plus), np.abs(minus)])
        worst = max(worst, mods.max())
        q1, _ = np.linalg.qr(rng.standard_normal((n, n)))
        q2, _ = np.linalg.qr(rng.standard_normal((n, n)))
        op = DenseOperator(q1 @ np.diag(sig) @ q2.T)
        cfg = SolverConfig("soar_sv", dt=dt, eta=eta, allow_unstable_step=True).validated(op)
        dense = np.sort(np.abs(np.linalg.eigvals(iteration_matrix(op, cfg))))
        # defective pairs (exact critical modes) are only resolved to sqrt(eps)
        dense_gap = max(dense_gap, np.abs(np.sort(mods) - dense).max())
        dense_checked += 1
    ok = worst <= 1 + 1e-12 and dense_gap <= 1e-6
    verdict(2, "Stoermer-Verlet spectral stability", ok,
            f"max |mu| - 1 = {worst - 1:.2e} over 200 triples; dense eigensolve agreement "
            f"{dense_gap:.1e} on {dense_checked} matrices (n <= 20)",
            time.perf_counter() - start, 5.0)


def test_03_filter_bounds():
    start = time.perf_counter()
    slack = 1e-9
    details, ok = [], True
    for name, cfg in spectrum_regimes().items():
        c = filter_constants(cfg)
        lam = cfg.spectrum
        hi = min(c.alpha_bar, cfg.operator_norm_sq)
        alpha = np.logspace(-6, math.log10(hi), 200)
        g, phi, r, _ = filter_arrays(cfg.eta, alpha[:, None], lam[None, :])
        m_r = np.abs(r).max() - c.gamma1
        m_phi = np.abs(phi).max() - c.gamma2
        m_g = (np.sqrt(lam)[None, :] * np.abs(g) * np.sqrt(alpha)[:, None]).max() - c.gamma_star
        ok &= max(m_r, m_phi, m_g) <= slack
        details.append(f"{name}: max(|r|-g1, |phi|-g2, sqrt(lam a)|g|-g*) = "
                       f"({m_r:.2e}, {m_phi:.2e}, {m_g:.2e})")
    verdict(3, "filter bounds on 200x200 grids", ok, "; ".join(details),
            time.perf_counter() - start, 1.0)


def test_04_qualification():
    start = time.perf_counter()
    ok, worst = True, {}
    for name, cfg in spectrum_regimes().items():
        lam = cfg.spectrum
        alpha = np.logspace(-4, math.log10(cfg.operator_norm_sq), 100)
        _, phi, r, _ = filter_arrays(cfg.eta, alpha[:, None], lam[None, :])
        for p in (0.25, 0.5, 1.0, 2.0):
            gamma = qualification_constant(cfg, p)
            lp = lam[None, :] ** p
            sup = np.maximum(np.max(np.abs(r) * lp, axis=1), np.max(np.abs(phi) * lp, axis=1))
            ratio = float(np.max(sup / (gamma * alpha**p)))
            worst[(name, p)] = ratio
            ok &= ratio <= 1 + 1e-12
    top = max(worst.values())
    verdict(4, "qualification", ok,
            f"max sup|.| lam^p / (gamma(p) alpha^p) = {top:.3f} over 3 regimes x 4 exponents",
            time.perf_counter() - start, 2.0)


def test_05_energy_monotone():
    start = time.perf_counter()
    prob = build_integral_problem(100, "example1")
    data = add_noise(prob, 1e-3, 0)
    norm = prob.op.norm()
    eta = norm
    base = SolverConfig("soar_sv", eta=eta, x0=1.0)
    dt = base.step_bound(norm) / 50
    cfg = SolverConfig("soar_sv", eta=eta, x0=1.0, dt=dt, max_iter=10_000)
    rule = StoppingRule(RuleKind.MAX_ITER_ONLY, delta=data.delta)
    _, _, traj = run(prob.op, data.y_delta, cfg, rule, thin_start=10**9)
    level = (2.0 * data.delta) ** 2
    chi = np.array([p.energy for p in traj]) - level
    worst = float(np.max(np.diff(chi)))
    ok = len(traj) == 10_001 and worst <= 1e-8 * abs(chi[0])
    verdict(5, "energy discrepancy is non-increasing", ok,
            f"{len(traj) - 1} steps at dt = {dt:.4g}, eta = {eta:.4g}; "
            f"max increase {worst:.2e} vs slack {1e-8 * abs(chi[0]):.2e}",
            time.perf_counter() - start, 10.0)


def test_06_rates():
    start = time.perf_counter()
    problem = planted_source_problem(1 / np.arange(1, 31), p=1.0, rho=1.0, direction=np.ones(30))
    cfg = SolverConfig("soar_sv", eta=3.0, max_iter=10**6)
    recs = []
    for delta in (1e-2, 1e-3, 1e-4):
        data = add_gaussian_noise(problem, delta, seed=1)
        st, dec, _ = run(problem.op, data.y_delta, cfg,
                         StoppingRule(RuleKind.MOROZOV_DP, tau=2.0, delta=data.delta))
        recs.append({"delta": delta, "k_star": dec.k_star,
                     "err": float(np.linalg.norm(st.x - problem.x_exact))})
    e_fit = fit_rate(recs, "delta", "err")
    k_fit = fit_rate(recs, "delta", "k_star")
    ok = abs(e_fit.slope - 2 / 3) <= 0.2 and abs(k_fit.slope + 1) <= 0.25
    verdict(6, "planted-source rates", ok,
            f"k* = {[r['k_star'] for r in recs]}; error slope {e_fit.slope:.3f} "
            f"(2/3 +- 0.2), k* slope {k_fit.slope:.3f} (-1 +- 0.25)",
            time.perf_counter() - start, 30.0)


def test_07_example2_methods():
    start = time.perf_counter()
    preset = spec_from_mapping(load_config("example2.cfg", "bench"))
    assert preset.n == 400 and preset.delta_primes == (1e-3,)
    soar = spec_from_mapping({"methods": "soar_sv", "rules": "dp, tedp"}, base=preset)
    lw = spec_from_mapping({"methods": "landweber", "rules": "dp"}, base=preset)
    dp, tedp = run_matrix(soar)
    (land,) = run_matrix(lw)
    ok = (30 <= dp.k_star <= 300 and dp.l2err <= 0.15
          and land.k_star >= 10 * dp.k_star
          and tedp.l2err <= dp.l2err + 0.02
          and all(r.status == "ok" for r in (dp, tedp, land)))
    verdict(7, "Example 2 method comparison", ok,
            f"SOAR-SV+DP k* = {dp.k_star} L2 = {dp.l2err:.4f}; TEDP k* = {tedp.k_star} "
            f"L2 = {tedp.l2err:.4f}; Landweber+DP k* = {land.k_star} "
            f"({land.k_star / dp.k_star:.1f}x)",
            time.perf_counter() - start, 120.0)


def test_08_noise_free_decay():
    start = time.perf_counter()
    prob = build_integral_problem(400, "example1")
    eta = prob.op.norm()
    cfg = SolverConfig("soar_sv", eta=eta, x0=1.0, max_iter=100_000)
    _, _, traj = run(prob.op, np.array(prob.y_exact), cfg,
                     StoppingRule(RuleKind.MAX_ITER_ONLY), thin_start=100, thin_every=100)
    t = np.array([p.t for p in traj])
    r = np.array([p.residual_norm for p in traj])
    tail = t >= t[-1] / 10
    slope = float(np.polyfit(np.log(t[tail]), np.log(r[tail]), 1)[0])
    verdict(8, "noise-free residual decay", slope <= -0.5,
            f"tail slope of log residual vs log t over t in [{t[-1] / 10:.3g}, {t[-1]:.3g}] "
            f"= {slope:.3f} (<= -0.5)",
            time.perf_counter() - start, 60.0)


def test_09_euler_three_term():
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    a = rng.standard_normal((5, 5))
    op, y = DenseOperator(a), rng.standard_normal(5)
    x0, v0 = rng.standard_normal(5), rng.standard_normal(5)
    cfg = SolverConfig("soar_euler", eta=0.8, x0=x0, v0=v0).validated(op)
    mu, om = euler_semi_iterative_coefficients(cfg)
    s = step_soar_euler(initial_state(op, y, cfg), op, y, cfg)
    x_prev, x = x0, x0 + cfg.dt * v0
    gap = np.abs(s.x - x).max()
    for _ in range(99):
        x_prev, x = x, x + mu * (x - x_prev) + om * cfg.dt * a.T @ (y - a @ x)
        s = step_soar_euler(s, op, y, cfg)
        gap = max(gap, np.abs(s.x - x).max() / max(1.0, np.abs(x).max()))
    ok = gap <= 1e-12 and mu == pytest.approx(1 - cfg.dt * 0.8) and om == cfg.dt
    verdict(9, "Euler scheme equals three-term recurrence", ok,
            f"max deviation over 100 steps {gap:.2e}; mu = {mu:.6f}, omega = dt = {om:.6f}",
            time.perf_counter() - start, 1.0)


def test_10_fem_spectrum():
    start = time.perf_counter()
    prob = build_integral_problem(200, "example1")
    s = prob.op.svd().singular_values[:5]
    ref = 1 / (np.arange(1, 6) * np.pi) ** 2
    dev = np.abs(s / ref - 1)
    verdict(10, "discrete spectrum", np.all(dev <= 0.02),
            f"relative deviations of top 5 singular values "
            f"{', '.join(f'{d:.2e}' for d in dev)} (<= 0.02)",
            time.perf_counter() - start, 5.0)
