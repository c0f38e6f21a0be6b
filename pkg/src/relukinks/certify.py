"""Kink tracking and a run-time certificate that no kink ever leaves (-x, x).

The certificate bounds the total future drift kappa = h * sum_l ||u_l||_inf by
comparing the v_bar recursion with a frozen linear comparator. The comparator
is built from the moments at an anchor step (initialisation, or any later step
of a fixed-pattern run). Given kappa, every neuron's parameters stay within an
explicit envelope of their anchor values, which pins each kink.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import SIDES, RegressionSummary
from .network import Hyperparams, Weights
from .reduced import (ActivationPattern, ReferenceOperator, SigmaMoments, contraction_sum_bound,
                      reference_sum_bounds, sigma_moments)

SAFETY = 1.0 + 1e-9
MAX_FIXED_POINT_ITERS = 50


@dataclass(frozen=True)
class KinkReport:
    positions: np.ndarray        # -b_i / a_i, NaN where a_i = 0
    crossed: bool
    flat_neurons: np.ndarray     # indices with a_i = 0
    first_crossing_step: int | None = None

    @property
    def kinks(self) -> list:
        return [(int(i), float(p)) for i, p in enumerate(self.positions) if not math.isnan(p)]


def kinks(W: Weights, x_bound: float, step: int | None = None) -> KinkReport:
    """Kink positions; crossed iff some kink sits at |pos| >= x_bound (closed boundary)."""
    if not x_bound > 0:
        raise ValueError("x_bound must be positive")
    live = W.a != 0
    pos = np.full(W.m, np.nan)
    pos[live] = -W.b[live] / W.a[live]
    crossed = bool(np.any(np.abs(W.b[live]) >= np.abs(W.a[live]) * x_bound))
    return KinkReport(pos, crossed, np.flatnonzero(~live), step if crossed else None)


# --- difference envelopes ---------------------------------------------------

def _exp(t: float) -> float:
    return math.exp(t) if t < 700.0 else math.inf


def theta_envelopes(theta_abs: np.ndarray, kappa: float):
    """Bounds on |a_k - a_0|, |b_k - b_0|, |w_k - w_0| for every neuron (rows of |theta_0|)."""
    a, b, w = theta_abs[:, 0], theta_abs[:, 1], theta_abs[:, 2]
    second = 2.0 * kappa ** 2 * _exp(2.0 * kappa) * theta_abs.max(axis=1)
    env_a = (kappa * w + second) * SAFETY
    env_w = (kappa * (a + b) + second) * SAFETY
    return env_a, env_a.copy(), env_w


_QT = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])


def sigma_envelope(Sigma0: np.ndarray, kappa: float) -> np.ndarray:
    S = np.abs(Sigma0)
    norm = float(S.sum(axis=1).max())
    return (kappa * (_QT @ S + S @ _QT) + 8.0 * kappa ** 2 * _exp(4.0 * kappa) * norm) * SAFETY


@dataclass(frozen=True)
class CertificateAccumulator:
    kappa_u: float
    step: int
    h: float
    theta0_abs: np.ndarray
    env_a: np.ndarray
    env_b: np.ndarray
    env_w: np.ndarray
    S_total: float = math.nan
    S_top: float = math.nan
    delta_hat: float = math.nan

    @property
    def margins(self) -> np.ndarray:
        return self.theta0_abs[:, 0]

    def with_kappa(self, kappa: float, step: int) -> "CertificateAccumulator":
        ea, eb, ew = theta_envelopes(self.theta0_abs, kappa)
        return replace(self, kappa_u=kappa, step=step, env_a=ea, env_b=eb, env_w=ew)


def new_accumulator(W0: Weights, h: float, op: ReferenceOperator | None = None) -> CertificateAccumulator:
    theta = np.abs(np.column_stack([W0.a, W0.b, W0.w]))
    ea, eb, ew = theta_envelopes(theta, 0.0)
    S_total = S_top = math.nan
    if op is not None and h * op.lambda_max <= 1.0 + 1e-12:
        S_total, S_top = reference_sum_bounds(op, h)
    return CertificateAccumulator(0.0, 0, h, theta, ea, eb, ew, S_total, S_top)


def update_accumulator(acc: CertificateAccumulator, u_k, params: Hyperparams) -> CertificateAccumulator:
    kappa = acc.kappa_u + params.h * float(np.max(np.abs(u_k)))
    if kappa == acc.kappa_u:
        return replace(acc, step=acc.step + 1)
    return acc.with_kappa(kappa, acc.step + 1)


# --- the certificate ----------------------------------------------------------

@dataclass(frozen=True)
class Anchor:
    """Parameter triples and per-side moments at the step the bounds are measured from."""
    theta: np.ndarray
    tau: ActivationPattern
    Sigma: SigmaMoments

    @classmethod
    def from_weights(cls, W: Weights, tau: ActivationPattern) -> "Anchor":
        return cls(np.column_stack([W.a, W.b, W.w]), tau, sigma_moments(W, tau))


@dataclass(frozen=True)
class Certificate:
    ok: bool
    kappa_hat: float = math.nan
    delta_hat: float = math.nan
    reason: str = ""


def _deviation(anchor: Anchor, kappa_total: float, kappa_step: float) -> float:
    """Upper bound on ||G_l - G_anchor + h G^wab_l||_inf for all future l.

    kappa_total bounds the drift since the anchor, kappa_step bounds h ||u_l||_inf.
    """
    worst = 0.0
    for s in SIDES:
        S0 = anchor.Sigma[s]
        E = sigma_envelope(S0, kappa_total)
        dev = np.array([[E[2, 2] + E[0, 0], E[0, 1]], [E[0, 1], E[2, 2] + E[1, 1]]])
        wab = kappa_step * (abs(S0[0, 2]) + E[0, 2] + abs(S0[1, 2]) + E[1, 2])
        worst = max(worst, float(dev.sum(axis=1).max()) + wab)
    return worst * SAFETY


def certify_from_anchor(kappa_past: float, anchor: Anchor, op: ReferenceOperator,
                        summary: RegressionSummary, v_bar, params: Hyperparams,
                        x_target: float) -> Certificate:
    """Try to prove that GD continued from the current step never moves a kink to |x| >= x_target.

    ``kappa_past`` is h * sum ||u_l||_inf over the steps already taken since the
    anchor, ``op`` the comparator built from the anchor moments and ``v_bar``
    the current error vector. Returns ok=False whenever any bound fails.
    """
    h = params.h
    if not (0 < x_target <= summary.x_underbar):
        return Certificate(False, reason="target interval exceeds data gap")
    if h * op.lambda_max <= 1.0 + 1e-12:
        S = reference_sum_bounds(op, h)[0]
    else:
        S = contraction_sum_bound(op, h)
    if not math.isfinite(S):
        return Certificate(False, reason="comparator not contractive")
    S *= SAFETY
    nB = (1.0 + abs(params.alpha)) * SAFETY
    nM = float(np.abs(op.M).sum(axis=1).max()) * SAFETY
    base_tail = nB * nM * S * float(np.max(np.abs(v_bar))) * SAFETY

    def delta_at(kappa_hat):
        return S * nB * nB * nM * _deviation(anchor, kappa_hat, kappa_hat - kappa_past)

    kappa_hat = kappa_past + base_tail
    if not kappa_hat < 1.0:
        # envelopes are first order in kappa; beyond this nothing can be certified
        return Certificate(False, kappa_hat, math.nan, "drift bound too large")
    delta = math.nan
    for _ in range(MAX_FIXED_POINT_ITERS):
        delta = delta_at(kappa_hat)
        if not delta < 1.0:
            return Certificate(False, kappa_hat, delta, "comparator deviation too large")
        needed = kappa_past + base_tail / (1.0 - delta)
        if not needed < 1.0:
            return Certificate(False, needed, delta, "drift bound too large")
        if needed <= kappa_hat:
            break
        kappa_hat = max(kappa_hat, needed) * (1.0 + 1e-6)
    else:
        return Certificate(False, kappa_hat, delta, "fixed point did not settle")

    theta_abs = np.abs(anchor.theta)
    env_a, env_b, _ = theta_envelopes(theta_abs, kappa_hat)
    live = anchor.tau.tau != 0
    if not np.all(live):
        return Certificate(False, kappa_hat, delta, "neuron with a = 0")
    ok = np.all(theta_abs[:, 1] + env_b < (theta_abs[:, 0] - env_a) * x_target)
    return Certificate(bool(ok), kappa_hat, delta, "" if ok else "kink envelope reaches target")


def certify_forever(acc: CertificateAccumulator, op: ReferenceOperator, summary: RegressionSummary,
                    W0: Weights, v_bar, params: Hyperparams, x_target: float) -> Certificate:
    """Certificate measured from initialisation with the reference operator as comparator."""
    from .reduced import activation_pattern
    anchor = Anchor.from_weights(W0, activation_pattern(W0))
    return certify_from_anchor(acc.kappa_u, anchor, op, summary, v_bar, params, x_target)
