"""Fixed-activation-pattern view of training.

While every neuron keeps its initial sign pattern on the data, the network is
affine on each half-line and training is driven by the two 3x3 moment
matrices of the parameter triples (a_i, b_i, w_i), the output bias c, and the
4-vector of slope/intercept errors v_bar = (p1, p-1, q1, q-1) - optimum.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import SIDES, RegressionSummary
from .errors import ConfigError, DomainError, NumericalError, SingularityError
from .linalg import jacobi_eigh, sym_sqrt
from .network import Hyperparams, Weights

# tilde ordering (p1, q1, p-1, q-1) -> non-tilde ordering (p1, p-1, q1, q-1)
_TILDE_TO_PLAIN = np.array([0, 2, 1, 3])


@dataclass(frozen=True)
class ActivationPattern:
    tau: np.ndarray

    def members(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.tau == s)


def activation_pattern(W0: Weights) -> ActivationPattern:
    tau = np.sign(W0.a).astype(int)
    if np.any(tau == 0):
        warnings.warn("neurons with a_i = 0 are excluded from both sign classes", RuntimeWarning)
    return ActivationPattern(tau)


def outer_pieces(W: Weights, tau: ActivationPattern, alpha: float) -> np.ndarray:
    """(p1, p-1, q1, q-1): slopes and intercepts of the two affine pieces under pattern tau."""
    wa, wb = W.w * W.a, W.w * W.b
    pos, neg = tau.tau == 1, tau.tau == -1
    swa = {1: wa[pos].sum(), -1: wa[neg].sum()}
    swb = {1: wb[pos].sum(), -1: wb[neg].sum()}
    return np.array([swa[1] + alpha * swa[-1], swa[-1] + alpha * swa[1],
                     W.c + swb[1] + alpha * swb[-1], W.c + swb[-1] + alpha * swb[1]])


def fixed_pattern_loss(W: Weights, params: Hyperparams, D, tau: ActivationPattern) -> float:
    if D.n == 0:
        raise DomainError("dataset is empty")
    v = outer_pieces(W, tau, params.alpha)
    f = np.where(D.x > 0, v[0] * D.x + v[2], v[1] * D.x + v[3])
    zero = D.x == 0
    if zero.any():  # no affine piece owns x = 0; use the frozen-slope value c + sum w phi(b)
        f[zero] = W.c + W.w @ np.where(W.b >= 0, W.b, params.alpha * W.b)
    r = D.y - f
    return float(r @ r) / (2 * D.n)


def in_region(W: Weights, W0: Weights, x_bound: float) -> bool:
    if not x_bound > 0:
        raise DomainError("x_bound must be positive")
    margin = (np.abs(W0.a) - np.abs(W0.a - W.a)) * x_bound
    return bool(np.all(np.abs(W.b) < margin))


@dataclass(frozen=True)
class SigmaMoments:
    """Gram matrices sum_{i in I_s} theta_i theta_i^T with theta_i = (a_i, b_i, w_i)."""
    pos: np.ndarray
    neg: np.ndarray

    def __getitem__(self, s: int) -> np.ndarray:
        return self.pos if s > 0 else self.neg


def sigma_moments(W: Weights, tau: ActivationPattern) -> SigmaMoments:
    theta = np.column_stack([W.a, W.b, W.w])
    out = []
    for s in SIDES:
        t = theta[tau.tau == s]
        out.append(t.T @ t)
    return SigmaMoments(*out)


def v_from_moments(Sigma: SigmaMoments, c: float, alpha: float) -> np.ndarray:
    P, N = Sigma.pos, Sigma.neg
    return np.array([P[0, 2] + alpha * N[0, 2], N[0, 2] + alpha * P[0, 2],
                     c + P[1, 2] + alpha * N[1, 2], c + N[1, 2] + alpha * P[1, 2]])


def _require_invertible(summary: RegressionSummary):
    if not summary.invertible:
        raise SingularityError("a per-side moment matrix is singular")


def v_opt_vector(summary: RegressionSummary) -> np.ndarray:
    _require_invertible(summary)
    vp, vn = summary.v_opt[1], summary.v_opt[-1]
    return np.array([vp[0], vn[0], vp[1], vn[1]])


def moment_matrix(summary: RegressionSummary) -> np.ndarray:
    """4x4 M: diag(M_1, M_-1) written in the (p1, p-1, q1, q-1) ordering."""
    cached = summary.extra.get("M4")
    if cached is not None:
        return cached
    Mt = np.zeros((4, 4))
    Mt[:2, :2] = summary.M[1]
    Mt[2:, 2:] = summary.M[-1]
    M4 = Mt[np.ix_(_TILDE_TO_PLAIN, _TILDE_TO_PLAIN)]
    M4.flags.writeable = False
    summary.extra["M4"] = M4
    return M4


def mixing_matrix(alpha: float) -> np.ndarray:
    """blockdiag([[1, a], [a, 1]], [[1, a], [a, 1]]): mixes the two sides of each coordinate."""
    return np.array([[1.0, alpha, 0.0, 0.0], [alpha, 1.0, 0.0, 0.0],
                     [0.0, 0.0, 1.0, alpha], [0.0, 0.0, alpha, 1.0]])


def bias_coupling() -> np.ndarray:
    C = np.zeros((4, 4))
    C[2:, 2:] = 1.0
    return C


@dataclass(frozen=True)
class UVectors:
    u_hat: np.ndarray   # (r^_1, r^_-1, s^_1, s^_-1)
    u: np.ndarray       # B u_hat
    v_bar: np.ndarray   # (p1, p-1, q1, q-1) minus the optimum


def u_vectors(Sigma: SigmaMoments, c: float, summary: RegressionSummary, alpha: float) -> UVectors:
    v_bar = v_from_moments(Sigma, c, alpha) - v_opt_vector(summary)
    u_hat = -moment_matrix(summary) @ v_bar
    return UVectors(u_hat, mixing_matrix(alpha) @ u_hat, v_bar)


def u_hat_from_residuals(W: Weights, tau: ActivationPattern, D, alpha: float) -> np.ndarray:
    """(r^_1, r^_-1, s^_1, s^_-1) evaluated directly as -(1/n) sum_{J_s} (f - y) (x, 1)."""
    v = outer_pieces(W, tau, alpha)
    out = np.zeros(4)
    for k, s in enumerate(SIDES):
        mask = D.x > 0 if s > 0 else D.x < 0
        xs, ys = D.x[mask], D.y[mask]
        res = v[k] * xs + v[2 + k] - ys
        out[k] = -(res @ xs) / D.n
        out[2 + k] = -res.sum() / D.n
    return out


def _plain_blocks(blocks) -> np.ndarray:
    Gt = np.zeros((4, 4))
    Gt[:2, :2] = blocks[0]
    Gt[2:, 2:] = blocks[1]
    return Gt[np.ix_(_TILDE_TO_PLAIN, _TILDE_TO_PLAIN)]


def g_blocks(Sigma: SigmaMoments):
    """Per-side 2x2 blocks G^w_s + G^ab_s."""
    out = []
    for s in SIDES:
        S = Sigma[s]
        out.append(np.array([[S[2, 2] + S[0, 0], S[0, 1]], [S[0, 1], S[2, 2] + S[1, 1]]]))
    return out


def g_wab_scalars(Sigma: SigmaMoments, u: np.ndarray):
    """(r_s Sigma_{s,wa} + s_s Sigma_{s,wb}) for s = 1, -1."""
    return [u[k] * Sigma[s][0, 2] + u[2 + k] * Sigma[s][1, 2] for k, s in enumerate(SIDES)]


def assemble_A(Sigma: SigmaMoments, u: np.ndarray, h: float, alpha: float) -> np.ndarray:
    gw = g_wab_scalars(Sigma, u)
    blocks = [g + h * gw[k] * np.eye(2) for k, g in enumerate(g_blocks(Sigma))]
    B = mixing_matrix(alpha)
    return B @ _plain_blocks(blocks) @ B + bias_coupling()


@dataclass(frozen=True)
class ReducedState:
    Sigma: SigmaMoments
    c: float

    @classmethod
    def from_weights(cls, W: Weights, tau: ActivationPattern) -> "ReducedState":
        return cls(sigma_moments(W, tau), W.c)

    def v_bar(self, summary: RegressionSummary, alpha: float) -> np.ndarray:
        return v_from_moments(self.Sigma, self.c, alpha) - v_opt_vector(summary)


def q_matrix(r: float, s: float) -> np.ndarray:
    return np.array([[0.0, 0.0, r], [0.0, 0.0, s], [r, s, 0.0]])


def step_reduced(state: ReducedState, summary: RegressionSummary, params: Hyperparams) -> ReducedState:
    h = params.h
    uv = u_vectors(state.Sigma, state.c, summary, params.alpha)
    new = []
    for k, s in enumerate(SIDES):
        T = np.eye(3) + h * q_matrix(uv.u[k], uv.u[2 + k])
        new.append(T @ state.Sigma[s] @ T)
    c = state.c + h * (uv.u_hat[2] + uv.u_hat[3])
    return ReducedState(SigmaMoments(*new), c)


def fixed_pattern_step(W: Weights, tau: ActivationPattern, summary: RegressionSummary,
                       params: Hyperparams) -> tuple[Weights, np.ndarray]:
    """One GD step on the fixed-pattern loss in O(m) using the data's moment statistics.

    Returns the new weights and the mixed residual vector u used by the step.
    """
    h, alpha = params.h, params.alpha
    v = outer_pieces(W, tau, alpha)
    u_hat = np.empty(4)
    for k, s in enumerate(SIDES):
        g = summary.u0[s] - summary.M[s] @ v[[k, 2 + k]]
        u_hat[k], u_hat[2 + k] = g
    u = mixing_matrix(alpha) @ u_hat
    r = np.where(tau.tau == 1, u[0], np.where(tau.tau == -1, u[1], 0.0))
    s = np.where(tau.tau == 1, u[2], np.where(tau.tau == -1, u[3], 0.0))
    a = W.a + h * r * W.w
    b = W.b + h * s * W.w
    w = W.w + h * (r * W.a + s * W.b)
    return Weights(a, b, W.c + h * (u_hat[2] + u_hat[3]), w), u


@dataclass(frozen=True)
class ReferenceOperator:
    B: np.ndarray
    C: np.ndarray
    M: np.ndarray
    A_ref: np.ndarray
    H: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    M_eigvals: np.ndarray

    @property
    def lambda_max(self) -> float:
        return float(self.eigvals[0])

    @property
    def lambda_min(self) -> float:
        return float(self.eigvals[-1])

    @property
    def cond_M(self) -> float:
        return float(self.M_eigvals[0] / self.M_eigvals[-1])

    @property
    def h_auto(self) -> float:
        return 1.0 / self.lambda_max


def comparator_operator(Sigma: SigmaMoments, summary: RegressionSummary, alpha: float) -> ReferenceOperator:
    """B(G^w + G^ab)B + C built from arbitrary moments, with its symmetrised spectrum."""
    _require_invertible(summary)
    B = mixing_matrix(alpha)
    C = bias_coupling()
    M = moment_matrix(summary)
    A = B @ _plain_blocks(g_blocks(Sigma)) @ B + C
    Mh = sym_sqrt(M)
    H = Mh @ A @ Mh
    H = 0.5 * (H + H.T)
    vals, vecs = jacobi_eigh(H)
    mvals, _ = jacobi_eigh(M)
    if mvals[-1] <= 0:
        raise SingularityError("moment matrix is not positive definite")
    return ReferenceOperator(B, C, M, A, H, vals, vecs, mvals)


def reference_operator(W0: Weights, summary: RegressionSummary, alpha: float) -> ReferenceOperator:
    if np.any(W0.b != 0):
        raise ConfigError("reference operator is defined at a zero-bias initialisation")
    return comparator_operator(sigma_moments(W0, activation_pattern(W0)), summary, alpha)


def contraction_sum_bound(op: ReferenceOperator, h: float) -> float:
    """Upper bound on h * sum_l ||(I - h A M)^l||_inf for the operator's A.

    (I - hAM)^l = M^{-1/2} (I - hH)^l M^{1/2}, so each term is at most
    2 sqrt(cond M) rho^l with rho the spectral radius of I - hH.
    """
    rho = float(np.max(np.abs(1.0 - h * op.eigvals)))
    if not (op.lambda_min > 0 and rho < 1.0):
        return math.inf
    return 2.0 * math.sqrt(op.cond_M) * h / (1.0 - rho)


def reference_sum_bounds(op: ReferenceOperator, h: float) -> tuple[float, float]:
    if h * op.lambda_max > 1.0 + 1e-12:
        raise NumericalError(f"step size {h} exceeds 1/lambda_max = {1 / op.lambda_max}")
    root = 2.0 * math.sqrt(op.cond_M)
    return root / op.lambda_min, root / float(op.eigvals[1])
