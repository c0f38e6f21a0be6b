import numpy as np
import pytest

from relukinks.data import Dataset, example_dataset, example_distribution, regression_summary, sample
from relukinks.errors import NumericalError, SingularityError
from relukinks.linalg import jacobi_eigh, sym_sqrt
from relukinks.network import Hyperparams, InitSpec, Weights, empirical_loss, gd_step, init_weights
from relukinks.reduced import (ActivationPattern, ReducedState, ReferenceOperator, activation_pattern,
                               assemble_A, fixed_pattern_loss, fixed_pattern_step, in_region, moment_matrix,
                               outer_pieces, reference_operator, reference_sum_bounds, sigma_moments,
                               step_reduced, u_hat_from_residuals, u_vectors, v_opt_vector)


def setup(m=12, n=60, seed=0, alpha=0.0, dist=None):
    rng = np.random.default_rng(seed)
    if dist is None:
        x = rng.choice([-1, 1], n) * rng.uniform(1.0, 3.0, n)
        D = Dataset(x, np.sin(x) + 0.3 * rng.normal(size=n))
    else:
        D = sample(dist, n, rng)
    s = regression_summary(D)
    W0 = init_weights(InitSpec(seed=seed + 100), Hyperparams(m, 1.0, alpha))
    op = reference_operator(W0, s, alpha)
    return D, s, W0, Hyperparams(m, op.h_auto, alpha), op


def test_jacobi_against_numpy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        S = rng.normal(size=(4, 4))
        S = S + S.T
        vals, vecs = jacobi_eigh(S)
        np.testing.assert_allclose(vals, np.linalg.eigvalsh(S)[::-1], atol=1e-12)
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(4), atol=1e-12)
        np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, S, atol=1e-12)
    R = sym_sqrt(np.diag([4.0, 9.0]))
    np.testing.assert_allclose(R, np.diag([2.0, 3.0]), atol=1e-15)
    with pytest.raises(NumericalError):
        sym_sqrt(np.diag([1.0, -1.0]))


def test_activation_pattern():
    W = Weights([1.5, -0.2, 0.0], [0, 0, 0], 0, [1, 1, 1])
    with pytest.warns(RuntimeWarning):
        tau = activation_pattern(W)
    assert tau.tau.tolist() == [1, -1, 0]
    tau = activation_pattern(Weights([1.0, 2.0], [0, 0], 0, [1, 1]))
    assert tau.members(-1).size == 0
    W = init_weights(InitSpec(seed=3), Hyperparams(1_000_000, 0.1))
    assert np.all(np.sign(W.a) != 0)


def test_fixed_pattern_loss():
    D, s, W0, p, _ = setup()
    tau = activation_pattern(W0)
    assert fixed_pattern_loss(W0, p, D, tau) == pytest.approx(empirical_loss(W0, p, D), rel=1e-13)
    W = W0
    for _ in range(30):
        W = gd_step(W, p, D)
    assert in_region(W, W0, D.x_underbar)
    assert fixed_pattern_loss(W, p, D, tau) == pytest.approx(empirical_loss(W, p, D), rel=1e-12)
    Z = Weights(np.zeros(3), np.zeros(3), 0.0, np.zeros(3))
    assert fixed_pattern_loss(Z, p, D, ActivationPattern(np.array([1, -1, 1]))) == empirical_loss(Z, p, D)
    vbar = outer_pieces(W, tau, 0.0) - v_opt_vector(s)
    gap = fixed_pattern_loss(W, p, D, tau) - s.best_affine_loss()
    assert abs(gap - 0.5 * vbar @ moment_matrix(s) @ vbar) < 1e-10


def test_in_region_examples():
    W0 = Weights([1.0, -2.0], [0.0, 0.0], 0.0, [1.0, 1.0])
    assert in_region(W0, W0, 1.0)
    W = Weights([-0.1, -2.0], [0.0, 0.0], 0.0, [1.0, 1.0])
    assert not in_region(W, W0, 1.0)
    W = Weights([1.0, -2.0], [0.99, 0.0], 0.0, [1.0, 1.0])
    assert in_region(W, W0, 1.0) and not in_region(W, W0, 0.5)


def test_region_gradients_agree():
    D, s, W0, p, _ = setup(alpha=0.2)
    tau = activation_pattern(W0)
    W = W0
    for _ in range(50):
        assert in_region(W, W0, D.x_underbar)
        full = gd_step(W, p, D)
        fast, _ = fixed_pattern_step(W, tau, s, p)
        for f, g in [(full.a, fast.a), (full.b, fast.b), (full.w, fast.w)]:
            assert np.max(np.abs(f - g)) < 1e-12
        assert abs(full.c - fast.c) < 1e-12
        W = full


def test_sigma_moments():
    tau = ActivationPattern(np.array([1]))
    S = sigma_moments(Weights([2.0], [0.0], 0.0, [3.0]), tau)
    np.testing.assert_array_equal(S.pos, [[4, 0, 6], [0, 0, 0], [6, 0, 9]])
    assert np.all(S.neg == 0)
    _, _, W0, _, _ = setup(m=40)
    S = sigma_moments(W0, activation_pattern(W0))
    for M in (S.pos, S.neg):
        assert np.all(M[1] == 0) and np.all(M[:, 1] == 0)
        assert np.linalg.eigvalsh(M)[0] >= -1e-10


def test_u_vectors():
    D, s, W0, p, _ = setup(alpha=0.3)
    tau = activation_pattern(W0)
    W = W0
    for _ in range(5):
        W = gd_step(W, p, D)
    st = ReducedState.from_weights(W, tau)
    uv = u_vectors(st.Sigma, st.c, s, 0.3)
    np.testing.assert_allclose(uv.u_hat, u_hat_from_residuals(W, tau, D, 0.3), atol=1e-10)
    uv0 = u_vectors(st.Sigma, st.c, s, 0.0)
    np.testing.assert_array_equal(uv0.u, uv0.u_hat)
    # a state sitting exactly at the optimum has zero residuals
    E = example_dataset()
    se = regression_summary(E)
    Z = ReducedState.from_weights(Weights([1.0, -1.0], [0, 0], 0.0, [0.0, 0.0]),
                                  ActivationPattern(np.array([1, -1])))
    uz = u_vectors(Z.Sigma, Z.c, se, 0.5)
    assert np.all(uz.u == 0) and np.all(uz.u_hat == 0)
    bad = regression_summary(Dataset.from_points([(1, 1), (-1, 0), (-2, 1)]))
    with pytest.raises(SingularityError):
        u_vectors(Z.Sigma, Z.c, bad, 0.0)


def test_assemble_A():
    D, s, W0, p, op = setup(alpha=0.2)
    tau = activation_pattern(W0)
    S0 = sigma_moments(W0, tau)
    u = np.array([0.3, -0.2, 0.1, 0.5])
    np.testing.assert_allclose(assemble_A(S0, u, 0.0, 0.2), op.A_ref, atol=1e-13)
    np.testing.assert_array_equal(assemble_A(S0, np.zeros(4), 0.0, 0.2), assemble_A(S0, np.zeros(4), 0.7, 0.2))
    W = W0
    for _ in range(20):
        W = gd_step(W, p, D)
    S = sigma_moments(W, tau)
    A = assemble_A(S, u, p.h, 0.2)
    gw = max(abs(u[k] * S[sd][0, 2] + u[2 + k] * S[sd][1, 2]) for k, sd in enumerate((1, -1)))
    assert np.max(np.abs(A - A.T)) <= 2 * (1 + 0.2) ** 2 * p.h * gw + 1e-12


def test_step_reduced_fixed_point():
    E = example_dataset()
    s = regression_summary(E)
    W = Weights([1.0, -1.0, 2.0], [0.0, 0.1, 0.0], 0.0, [0.0, 0.0, 0.0])
    st = ReducedState.from_weights(W, ActivationPattern(np.array([1, -1, 1])))
    nxt = step_reduced(st, s, Hyperparams(3, 0.1))
    np.testing.assert_array_equal(nxt.Sigma.pos, st.Sigma.pos)
    assert nxt.c == st.c


def test_step_reduced_recursion_and_full_match():
    D, s, W0, p, _ = setup(m=10, alpha=0.15)
    tau = activation_pattern(W0)
    M = moment_matrix(s)
    st = ReducedState.from_weights(W0, tau)
    W = W0
    for _ in range(300):
        uv = u_vectors(st.Sigma, st.c, s, p.alpha)
        A = assemble_A(st.Sigma, uv.u, p.h, p.alpha)
        nxt = step_reduced(st, s, p)
        v_next = nxt.v_bar(s, p.alpha)
        assert np.max(np.abs(v_next - (np.eye(4) - p.h * A @ M) @ uv.v_bar)) < 1e-12
        for Sg in (nxt.Sigma.pos, nxt.Sigma.neg):
            assert np.linalg.eigvalsh(Sg)[0] >= -1e-8
        W = gd_step(W, p, D)
        if not in_region(W, W0, D.x_underbar):
            break
        full = outer_pieces(W, tau, p.alpha) - v_opt_vector(s)
        assert np.max(np.abs(full - v_next)) < 1e-10
        st = nxt


def test_reference_operator_structure():
    D, s, W0, p, op = setup(m=64, n=4096, dist=example_distribution())
    assert np.all(op.A_ref[np.ix_([0, 1], [2, 3])] == 0) and np.all(op.A_ref[np.ix_([2, 3], [0, 1])] == 0)
    assert np.max(np.abs(op.H - op.H.T)) < 1e-10
    assert np.all(op.eigvals > 0)
    ev = np.sort(np.linalg.eigvals(op.A_ref @ op.M).real)[::-1]
    np.testing.assert_allclose(ev, op.eigvals, rtol=1e-8)
    with pytest.raises(Exception):
        reference_operator(Weights([1.0], [0.5], 0.0, [1.0]), s, 0.0)


def test_reference_spectral_scaling():
    tops, bottoms = [], []
    for m in (64, 256, 1024):
        t, b = [], []
        for seed in range(5):
            _, _, _, _, op = setup(m=m, n=4096, seed=seed, dist=example_distribution())
            t.append(op.eigvals[:2].mean() / m)
            b.append(op.eigvals[2:].mean())
        tops.append(np.mean(t))
        bottoms.append(np.mean(b))
    assert max(tops) / min(tops) < 1.5
    assert max(bottoms) / min(bottoms) < 2.0 and min(bottoms) > 0


def test_reference_sum_bounds_oracle():
    D, s, W0, p, op = setup(m=8, n=200, dist=example_distribution())
    S_total, S_top = reference_sum_bounds(op, p.h)
    K = np.eye(4) - p.h * op.A_ref @ op.M
    P = np.eye(4)
    total = 0.0
    for _ in range(100_000):
        total += np.abs(P).sum(axis=1).max()
        P = K @ P
    assert p.h * total <= S_total
    assert S_top < S_total
    with pytest.raises(NumericalError):
        reference_sum_bounds(op, 2 * p.h)


def test_reference_sum_bounds_degenerate():
    eye = np.eye(4)
    op = ReferenceOperator(eye, eye, eye, eye, eye, np.ones(4), eye, np.ones(4))
    assert reference_sum_bounds(op, 1.0)[0] == 2.0
    op2 = ReferenceOperator(eye, eye, eye, 2 * eye, 2 * eye, 2 * np.ones(4), eye, np.ones(4))
    assert reference_sum_bounds(op2, 0.5)[0] < 2.0


def test_initialisation_moment_statistics():
    m = 4096
    ok = 0
    for seed in range(100):
        W0 = init_weights(InitSpec(seed=seed), Hyperparams(m, 1.0))
        S = sigma_moments(W0, activation_pattern(W0))
        assert np.all(W0.b == 0) and W0.c == 0
        w5 = all(m * 2 / 4 <= S[sd][0, 0] <= m * 2 for sd in (1, -1))
        w6 = all(2 / 4 <= S[sd][2, 2] <= 2 for sd in (1, -1))
        w7 = all(abs(S[sd][0, 2]) <= m ** 0.25 for sd in (1, -1))
        ok += w5 and w6 and w7
    assert ok >= 99
