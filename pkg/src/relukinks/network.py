"""Two-layer LeakyReLU network with scalar input: init, loss, gradient, GD/SGD."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class Hyperparams:
    m: int
    h: float
    alpha: float = 0.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ConfigError(f"width m must be a positive integer, got {self.m}")
        if not (math.isfinite(self.h) and self.h > 0):
            raise ConfigError(f"step size h must be positive, got {self.h}")
        if not math.isfinite(self.alpha) or abs(abs(self.alpha) - 1.0) == 0.0:
            raise ConfigError(f"alpha must be finite and not +-1, got {self.alpha}")


@dataclass(frozen=True)
class Weights:
    a: np.ndarray
    b: np.ndarray
    c: float
    w: np.ndarray

    def __post_init__(self):
        a, b, w = (np.asarray(v, dtype=float) for v in (self.a, self.b, self.w))
        if not (a.ndim == 1 and a.shape == b.shape == w.shape):
            raise ConfigError("a, b, w must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))
                and np.all(np.isfinite(w)) and math.isfinite(self.c)):
            raise DomainError("weights must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "c", float(self.c))

    @property
    def m(self) -> int:
        return self.a.shape[0]

    def copy(self) -> "Weights":
        return Weights(self.a.copy(), self.b.copy(), self.c, self.w.copy())

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b.tolist(), "c": self.c, "w": self.w.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Weights":
        return cls(np.array(d["a"]), np.array(d["b"]), d["c"], np.array(d["w"]))


# Gradient has exactly the layout of Weights (da, db, dc, dw).
Gradient = Weights


@dataclass(frozen=True)
class Distribution:
    """Symmetric scalar law: ``normal`` with variance ``param`` or ``uniform`` on (-param, param)."""
    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in ("normal", "uniform"):
            raise ConfigError(f"unsupported distribution {self.kind!r}")
        if not (math.isfinite(self.param) and self.param > 0):
            raise ConfigError(f"distribution parameter must be positive, got {self.param}")

    @classmethod
    def parse(cls, text: str) -> "Distribution":
        """Parse ``normal:2`` or ``uniform:1.5``."""
        try:
            kind, param = text.split(":")
            return cls(kind.strip(), float(param))
        except (ValueError, AttributeError) as exc:
            raise ConfigError(f"bad distribution descriptor {text!r}") from exc

    @property
    def variance(self) -> float:
        return self.param if self.kind == "normal" else self.param ** 2 / 3.0

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "normal":
            return rng.normal(0.0, math.sqrt(self.param), size)
        return rng.uniform(-self.param, self.param, size)


HE = Distribution("normal", 2.0)


@dataclass(frozen=True)
class InitSpec:
    dist_a: Distribution = HE
    dist_w: Distribution = HE
    seed: int = 0

    def __post_init__(self):
        for d in (self.dist_a, self.dist_w):
            if not isinstance(d, Distribution):
                raise ConfigError(f"invalid distribution descriptor {d!r}")


def init_weights(spec: InitSpec, params: Hyperparams) -> Weights:
    """b = 0, c = 0, a_i ~ Z_a, w_i ~ Z_w / sqrt(m); a is drawn before w."""
    rng = np.random.default_rng(spec.seed)
    m = params.m
    a = spec.dist_a.draw(rng, m)
    w = spec.dist_w.draw(rng, m) / math.sqrt(m)
    return Weights(a, np.zeros(m), 0.0, w)


def _as_points(D):
    x = np.asarray(D.x, dtype=float)
    y = np.asarray(D.y, dtype=float)
    if x.size == 0:
        raise DomainError("dataset is empty")
    return x, y


def _phi(t, alpha):
    return np.where(t >= 0, t, alpha * t)


def forward(W: Weights, params: Hyperparams, x):
    """f_W(x) = c + sum_i w_i phi(a_i x + b_i); accepts a scalar or an array of inputs."""
    xs = np.asarray(x, dtype=float)
    pre = np.multiply.outer(xs, W.a) + W.b
    out = W.c + _phi(pre, params.alpha) @ W.w
    return float(out) if np.ndim(out) == 0 else out


def empirical_loss(W: Weights, params: Hyperparams, D) -> float:
    x, y = _as_points(D)
    r = y - forward(W, params, x)
    return float(r @ r) / (2 * x.size)


def gradient(W: Weights, params: Hyperparams, D) -> Gradient:
    """Exact gradient of the empirical loss, with phi'(0) taken as 1."""
    x, y = _as_points(D)
    n = x.size
    pre = np.multiply.outer(x, W.a) + W.b          # (n, m)
    act = pre >= 0
    phi = np.where(act, pre, params.alpha * pre)
    dphi = np.where(act, 1.0, params.alpha)
    resid = W.c + phi @ W.w - y                    # f - y
    g = (resid[:, None] * dphi) * W.w              # d f / d pre, weighted by residual
    return Gradient(a=(x @ g) / n, b=g.sum(axis=0) / n, c=resid.sum() / n,
                    w=(resid @ phi) / n)


def _apply(W: Weights, G: Gradient, h: float) -> Weights:
    return Weights(W.a - h * G.a, W.b - h * G.b, W.c - h * G.c, W.w - h * G.w)


def gd_step(W: Weights, params: Hyperparams, D) -> Weights:
    return _apply(W, gradient(W, params, D), params.h)


def sgd_step(W: Weights, params: Hyperparams, batch) -> Weights:
    """One step on the batch's own loss (1/(2*|batch|) normalisation)."""
    return _apply(W, gradient(W, params, batch), params.h)


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Index arrays for one epoch: a fresh permutation cut into consecutive batches."""
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


# --- d-dimensional inputs (used for the embedding equivalence) -------------

@dataclass(frozen=True)
class WeightsND:
    """Same network with first-layer weights a_i in R^d (rows of ``A``)."""
    A: np.ndarray
    b: np.ndarray
    c: float
    w: np.ndarray

    def project(self, z) -> Weights:
        """1-d network seen along direction z: a_i = z . A_i."""
        return Weights(self.A @ np.asarray(z, float), self.b.copy(), self.c, self.w.copy())


def forward_nd(W: WeightsND, params: Hyperparams, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return W.c + _phi(X @ W.A.T + W.b, params.alpha) @ W.w


def gradient_nd(W: WeightsND, params: Hyperparams, X, y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise DomainError("dataset is empty")
    pre = X @ W.A.T + W.b
    act = pre >= 0
    phi = np.where(act, pre, params.alpha * pre)
    dphi = np.where(act, 1.0, params.alpha)
    resid = W.c + phi @ W.w - y
    g = (resid[:, None] * dphi) * W.w
    return g.T @ X / n, g.sum(axis=0) / n, resid.sum() / n, resid @ phi / n


def gd_step_nd(W: WeightsND, params: Hyperparams, X, y) -> WeightsND:
    dA, db, dc, dw = gradient_nd(W, params, X, y)
    h = params.h
    return WeightsND(W.A - h * dA, W.b - h * db, W.c - h * dc, W.w - h * dw)
