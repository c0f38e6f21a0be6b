"""End-to-end acceptance checks. Each test records one PASS/FAIL line (see conftest.py)."""
import math
import os

import numpy as np
import pytest

from relukinks import engine
from relukinks.certify import new_accumulator, update_accumulator
from relukinks.data import (Dataset, augment_three_points, distribution_summary, example_dataset,
                            example_distribution, regression_summary, sample)
from relukinks.harness import TrialConfig, log_schedule, run_trials, summarize, trial_dataset, variant_config
from relukinks.network import (Hyperparams, InitSpec, Weights, WeightsND, forward, forward_nd, gd_step,
                               gd_step_nd, gradient, init_weights)
from relukinks.reduced import (ReducedState, activation_pattern, fixed_pattern_loss,
                               fixed_pattern_step, in_region, moment_matrix, outer_pieces, reference_operator,
                               step_reduced, v_opt_vector)

from oracles import exact_central_difference, random_config

THREADS = os.cpu_count() or 1
TRIALS = 2000
_gd_results = {}


def gd_results(m):
    if m not in _gd_results:
        cfg = variant_config("gd", m, seed=2024)
        _gd_results[m] = (cfg, run_trials(cfg, TRIALS, THREADS))
    return _gd_results[m]


@pytest.mark.parametrize("m,target", [(16, 0.3611), (32, 0.2501), (64, 0.1824)])
def test_crossing_probability_gd(record, m, target):
    cfg, results = gd_results(m)
    rep = summarize(cfg, results)
    ok = abs(rep.p_hat - target) <= 0.03
    record(1, ok, f"gd m={m}: p_hat={rep.p_hat:.4f} target={target} +-0.03 "
                  f"(ci {rep.wilson_ci_95[0]:.3f}..{rep.wilson_ci_95[1]:.3f}, max_steps hits {rep.max_steps_hits})")
    assert ok


@pytest.mark.parametrize("delta,m,target", [(0.01, 16, 0.3605), (0.1, 128, 0.237)])
def test_crossing_probability_shift(record, delta, m, target):
    cfg = TrialConfig(m=m, distribution=example_distribution(delta), seed=7)
    rep = summarize(cfg, run_trials(cfg, TRIALS, THREADS))
    ok = abs(rep.p_hat - target) <= 0.03
    record(2, ok, f"shift delta={delta} m={m}: p_hat={rep.p_hat:.4f} target={target} +-0.03")
    assert ok


@pytest.mark.parametrize("m", [64, 256])
def test_step_size_constant(record, m):
    s = distribution_summary(example_distribution())
    inv = [1.0 / reference_operator(init_weights(InitSpec(seed=k), Hyperparams(m, 1.0)), s, 0.0).lambda_max
           for k in range(100)]
    mean = float(np.mean(inv))
    ok = 0.32 / m <= mean <= 0.48 / m
    record(3, ok, f"m={m}: mean 1/lambda_max = {mean * m:.4f}/m, band [0.32, 0.48]/m")
    assert ok


def _lazy_problem(rng):
    m = int(rng.choice([4, 8, 16, 32, 64, 128]))
    n = int(rng.integers(32, 1025))
    alpha = float(rng.choice([0.0, 0.0, 0.1, -0.2]))
    D = sample(example_distribution(float(rng.uniform(0.0, 0.02))), n, rng).for_training()
    s = regression_summary(D)
    W0 = init_weights(InitSpec(seed=int(rng.integers(2 ** 31))), Hyperparams(m, 1.0, alpha))
    h = reference_operator(W0, s, alpha).h_auto
    return D, s, W0, Hyperparams(m, h, alpha)


def test_reduced_dynamics_oracle(record):
    rng = np.random.default_rng(41)
    worst_step = worst_drift = worst_step_abs = 0.0
    covered = []
    for _ in range(50):
        D, s, W0, p = _lazy_problem(rng)
        tau = activation_pattern(W0)
        vopt = v_opt_vector(s)
        a, b, w = W0.a.copy(), W0.b.copy(), W0.w.copy()
        st = np.array([W0.c, 0.0])
        free = ReducedState.from_weights(W0, tau)
        steps = 0
        for k in range(10_000):
            W = Weights(a.copy(), b.copy(), float(st[0]), w.copy())
            one = step_reduced(ReducedState.from_weights(W, tau), s, p)
            free = step_reduced(free, s, p)
            engine.full_gd_run(a, b, w, st, D.x, D.y, p.alpha, p.h, math.inf, 1)
            W = Weights(a.copy(), b.copy(), float(st[0]), w.copy())
            if not in_region(W, W0, D.x_underbar):
                break
            v_full = outer_pieces(W, tau, p.alpha)
            vbar_full = v_full - vopt
            # v_bar shrinks towards zero while v stays O(1); errors are measured against the larger one
            scale = max(np.max(np.abs(vbar_full)), np.max(np.abs(v_full)))
            e1 = np.max(np.abs(one.v_bar(s, p.alpha) - vbar_full))
            worst_step_abs = max(worst_step_abs, e1)
            worst_step = max(worst_step, e1 / scale)
            worst_drift = max(worst_drift, np.max(np.abs(free.v_bar(s, p.alpha) - vbar_full)) / scale)
            steps = k + 1
        covered.append(steps)
    ok = worst_step < 1e-10 and worst_drift < 1e-8
    record(4, ok, f"50 runs, {sum(covered)} in-region steps (min run {min(covered)}): "
                  f"per-step rel err {worst_step:.2e} (<1e-10, abs {worst_step_abs:.2e}), drift {worst_drift:.2e} (<1e-8)")
    assert ok


def test_gradient_oracle(record):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        W, x, y = random_config(rng)
        alpha = float(rng.choice([0.0, 0.1, -0.5, 2.0]))
        g = gradient(W, Hyperparams(W.m, 0.1, alpha), Dataset(x, y))
        an = np.concatenate([g.a, g.b, [g.c], g.w])
        fd = exact_central_difference(W, alpha, x, y)
        both_zero = (an == 0) & (fd == 0)
        rel = np.abs(an - fd)[~both_zero] / np.abs(fd)[~both_zero]
        worst = max(worst, float(rel.max(initial=0.0)))
    ok = worst < 1e-6
    record(5, ok, f"100 configs: worst per-coordinate rel err {worst:.2e} (<1e-6)")
    assert ok


def test_loss_identity(record):
    rng = np.random.default_rng(17)
    worst = 0.0
    checked = 0
    for _ in range(20):
        m = int(rng.integers(2, 40))
        n = int(rng.integers(8, 300))
        alpha = float(rng.choice([0.0, 0.1, -0.3]))
        x = rng.uniform(0.3, 3.0, n) * rng.choice([-1.0, 1.0], n)
        x[:2] = [1.0, -1.0]
        D = Dataset(x, np.sin(x) + 0.2 * rng.normal(size=n))
        s = regression_summary(D)
        M = moment_matrix(s)
        vopt = v_opt_vector(s)
        W0 = init_weights(InitSpec(seed=int(rng.integers(2 ** 31))), Hyperparams(m, 1.0, alpha))
        p = Hyperparams(m, 0.5 * reference_operator(W0, s, alpha).h_auto, alpha)
        tau = activation_pattern(W0)
        a, b, w = W0.a.copy(), W0.b.copy(), W0.w.copy()
        st = np.array([W0.c, 0.0])
        k = 0
        for target in log_schedule(96):
            engine.full_gd_run(a, b, w, st, D.x, D.y, alpha, p.h, math.inf, target - k)
            k = target
            W = Weights(a.copy(), b.copy(), float(st[0]), w.copy())
            vbar = outer_pieces(W, tau, alpha) - vopt
            gap = fixed_pattern_loss(W, p, D, tau) - s.best_affine_loss()
            worst = max(worst, abs(gap - 0.5 * vbar @ M @ vbar))
            checked += 1
    ok = worst < 1e-10
    record(6, ok, f"20 runs, {checked} logged steps: worst |gap - quadratic form| {worst:.2e} (<1e-10)")
    assert ok


def test_certificate_soundness_audit(record):
    cfg, results = gd_results(16)
    picked = [(i, r) for i, r in enumerate(results) if r.outcome == "certified_never"][:500]
    crossings = fallbacks = 0
    for i, r in picked:
        D = trial_dataset(cfg, i)
        summ = regression_summary(D)
        M, u0 = engine.summary_arrays(summ)
        W = r.weights
        a, b, w = W.a.copy(), W.b.copy(), W.w.copy()
        st = np.array([W.c, 0.0])
        tau = np.where(a >= 0, 1, -1).astype(np.int64)
        status, k, _ = engine.fp_gd_run(a, b, w, tau, st, M, u0, cfg.alpha, r.h, cfg.x_target,
                                        D.x_underbar, 1_000_000)
        if status == engine.PATTERN_BROKEN:
            fallbacks += 1
            status, _ = engine.full_gd_run(a, b, w, st, D.x, D.y, cfg.alpha, r.h, cfg.x_target, 1_000_000 - k)
        crossings += status == engine.CROSSED
    ok = len(picked) == 500 and crossings == 0
    record(7, ok, f"{len(picked)} certified runs x 1e6 further steps: {crossings} crossings "
                  f"({fallbacks} needed the full-gradient kernel)")
    assert ok


def test_envelope_domination(record):
    rng = np.random.default_rng(23)
    violations = steps = 0
    for _ in range(50):
        m = int(rng.integers(2, 65))
        alpha = float(rng.choice([0.0, 0.1, -0.3]))
        D = sample(example_distribution(float(rng.uniform(0.0, 0.1))), int(rng.integers(32, 512)), rng)
        s = regression_summary(D)
        W0 = init_weights(InitSpec(seed=int(rng.integers(2 ** 31))), Hyperparams(m, 1.0, alpha))
        p = Hyperparams(m, reference_operator(W0, s, alpha).h_auto, alpha)
        tau = activation_pattern(W0)
        acc = new_accumulator(W0, p.h)
        W = W0
        for _ in range(3000):
            W, u = fixed_pattern_step(W, tau, s, p)
            acc = update_accumulator(acc, u, p)
            violations += int(np.sum(np.abs(W.a - W0.a) > acc.env_a))
            violations += int(np.sum(np.abs(W.b - W0.b) > acc.env_b))
            violations += int(np.sum(np.abs(W.w - W0.w) > acc.env_w))
            steps += 1
    ok = violations == 0
    record(8, ok, f"50 runs, {steps} steps: {violations} envelope violations")
    assert ok


@pytest.mark.parametrize("d", [2, 5])
def test_multidimensional_equivalence(record, d):
    rng = np.random.default_rng(100 + d)
    m = 32
    z = rng.normal(size=d)
    z /= np.linalg.norm(z)
    D = sample(example_distribution(0.05), 128, rng)
    X = np.outer(D.x, z)
    W = init_weights(InitSpec(seed=d), Hyperparams(m, 1.0))
    perp = rng.normal(size=(m, d))
    perp -= np.outer(perp @ z, z)
    Wt = WeightsND(np.outer(W.a, z) + perp, W.b.copy(), W.c, W.w.copy())
    p = Hyperparams(m, 0.5 * reference_operator(W, regression_summary(D), 0.0).h_auto)
    probes = np.linspace(-4.0, 4.0, 33)
    worst = 0.0
    for _ in range(1001):
        worst = max(worst, float(np.max(np.abs(forward_nd(Wt, p, np.outer(probes, z)) - forward(W, p, probes)))))
        W = gd_step(W, p, D)
        Wt = gd_step_nd(Wt, p, X, D.y)
    ok = worst < 1e-9
    record(9, ok, f"d={d}, m={m}, 1000 steps: worst |f_nd(xz) - f(x)| {worst:.2e} (<1e-9)")
    assert ok


def test_example_statics_and_augmentation(record):
    s = regression_summary(example_dataset())
    statics = (all(np.all(s.u0[k] == 0) for k in (1, -1)) and s.psi_q == 0
               and all(abs(np.linalg.det(s.M[k])) > 0 for k in (1, -1)) and s.invertible)
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(200):
        n = int(rng.integers(1, 30))
        x = rng.uniform(0.01, 5.0, n) * rng.choice([-1.0, 1.0], n)
        A = regression_summary(augment_three_points(Dataset(x, rng.normal(size=n) * 3)))
        if not (A.psi_q < 1e-10 and np.linalg.det(A.M[1]) > 0 and np.linalg.det(A.M[-1]) > 0):
            bad += 1
    ok = statics and bad == 0
    record(10, ok, f"example statics {'hold' if statics else 'fail'}; augmentation failures {bad}/200")
    assert ok
