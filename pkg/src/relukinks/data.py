"""Datasets, finite-support distributions, per-side regression summaries and assumption checks."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, NumericalError

SIDES = (1, -1)
SINGULAR_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Dataset:
    """Scalar-input samples; ``side(s)`` gives D_s (x > 0 for s = 1, x < 0 for s = -1)."""
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape != y.shape:
            raise DomainError("x and y must have the same length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DomainError("dataset points must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)

    __hash__ = None

    @classmethod
    def from_points(cls, points) -> "Dataset":
        pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
        return cls(pts[:, 0], pts[:, 1])

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def points(self) -> list:
        return list(zip(self.x.tolist(), self.y.tolist()))

    def side(self, s: int) -> "Dataset":
        mask = self.x > 0 if s > 0 else self.x < 0
        return Dataset(self.x[mask], self.y[mask])

    @property
    def x_underbar(self) -> float:
        return float(np.min(np.abs(self.x))) if self.n else math.inf

    def for_training(self) -> "Dataset":
        """Return self after checking the training preconditions (nonempty, no x = 0)."""
        if self.n == 0:
            raise DomainError("dataset is empty")
        if np.any(self.x == 0):
            raise DomainError("training data must not contain x = 0")
        return self


@dataclass(frozen=True)
class EmbeddedDataset:
    X: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class FiniteDistribution:
    x: np.ndarray
    y: np.ndarray
    prob: np.ndarray
    shift_delta: float = 0.0

    def __post_init__(self):
        x, y, p = (np.asarray(v, dtype=float).reshape(-1) for v in (self.x, self.y, self.prob))
        if not (x.shape == y.shape == p.shape) or x.size == 0:
            raise ConfigError("atoms need matching, nonempty x, y, prob")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError("atom probabilities must be positive and sum to 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and math.isfinite(self.shift_delta)):
            raise ConfigError("atoms must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "prob", p)
        object.__setattr__(self, "shift_delta", float(self.shift_delta))

    @classmethod
    def uniform(cls, D: Dataset, shift_delta: float = 0.0) -> "FiniteDistribution":
        return cls(D.x, D.y, np.full(D.n, 1.0 / D.n), shift_delta)

    def shifted(self, delta: float) -> "FiniteDistribution":
        return FiniteDistribution(self.x, self.y, self.prob, delta)

    @property
    def y_shifted(self) -> np.ndarray:
        return self.y + self.shift_delta


@dataclass(frozen=True)
class RegressionSummary:
    """Per-side moment matrices M[s], moment vectors u0[s] and affine optima v_opt[s]."""
    M: dict
    u0: dict
    y2: dict
    v_opt: dict
    lambda_min: dict
    lambda_max: dict
    psi_p: float
    psi_q: float
    x_underbar: float
    n: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def invertible(self) -> bool:
        return all(self.v_opt[s] is not None for s in SIDES)

    def best_affine_loss(self) -> float:
        """Least-squares loss of the two per-side regression lines (needs both optima)."""
        total = 0.0
        for s in SIDES:
            v = self.v_opt[s]
            total += 0.5 * (self.y2[s] - 2 * v @ self.u0[s] + v @ self.M[s] @ v)
        return float(total)


def is_singular(M: np.ndarray) -> bool:
    tr = M[0, 0] + M[1, 1]
    return bool(np.linalg.det(M) <= SINGULAR_RTOL * (tr / 2) ** 2)


def _summary(x, y, weight, n) -> RegressionSummary:
    M, u0, y2, vopt, lmin, lmax = {}, {}, {}, {}, {}, {}
    for s in SIDES:
        mask = x > 0 if s > 0 else x < 0
        xs, ys = x[mask], y[mask]
        if weight is None:  # plain sums, divided once so exact cancellations survive
            Ms = np.array([[xs @ xs, xs.sum()], [xs.sum(), xs.size]]) / n
            u0[s] = np.array([xs @ ys, ys.sum()]) / n
            y2[s] = float(ys @ ys) / n
        else:
            ws = weight[mask]
            Ms = np.array([[ws @ (xs * xs), ws @ xs], [ws @ xs, ws.sum()]])
            u0[s] = np.array([ws @ (xs * ys), ws @ ys])
            y2[s] = float(ws @ (ys * ys))
        M[s] = Ms
        ev = np.linalg.eigvalsh(Ms)
        lmin[s], lmax[s] = float(ev[0]), float(ev[1])
        vopt[s] = None if is_singular(Ms) else np.linalg.solve(Ms, u0[s])
    if all(v is not None for v in vopt.values()):
        psi_p = float(max(abs(vopt[s][0]) for s in SIDES))
        psi_q = float(max(abs(vopt[s][1]) for s in SIDES))
    else:
        psi_p = psi_q = math.nan
    xu = float(np.min(np.abs(x))) if x.size else math.inf
    return RegressionSummary(M, u0, y2, vopt, lmin, lmax, psi_p, psi_q, xu, n)


def regression_summary(D: Dataset) -> RegressionSummary:
    """Per-side summaries, every entry normalised by the full size n."""
    if D.n == 0:
        raise DomainError("dataset is empty")
    return _summary(D.x, D.y, None, D.n)


def distribution_summary(dist: FiniteDistribution) -> RegressionSummary:
    return _summary(dist.x, dist.y_shifted, dist.prob, 0)


EXAMPLE_POINTS = ((-3, -1), (-2, 2), (-1, -1), (1, 1), (2, -2), (3, 1))


def example_dataset() -> Dataset:
    """Six-point set whose per-side regression lines both pass through the origin."""
    return Dataset.from_points(EXAMPLE_POINTS)


def example_distribution(shift_delta: float = 0.0) -> FiniteDistribution:
    return FiniteDistribution.uniform(example_dataset(), shift_delta)


def sample(dist: FiniteDistribution, n: int, seed) -> Dataset:
    if int(n) != n or n < 1:
        raise ConfigError(f"sample size must be a positive integer, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.choice(dist.x.size, size=int(n), p=dist.prob)
    return Dataset(dist.x[idx], dist.y[idx] + dist.shift_delta)


@dataclass(frozen=True)
class AssumptionReport:
    p1_invertible: dict
    p2_gap: float
    p3_psi_q_zero: bool
    p4_excess: float
    psi_q: float

    def to_dict(self) -> dict:
        return {"p1_invertible": {str(k): v for k, v in self.p1_invertible.items()},
                "p2_gap": self.p2_gap, "p3_psi_q_zero": self.p3_psi_q_zero,
                "p4_excess": self.p4_excess, "psi_q": self.psi_q}


def check_assumptions(dist: FiniteDistribution) -> AssumptionReport:
    summ = distribution_summary(dist)
    x, y, p = dist.x, dist.y_shifted, dist.prob
    p1 = {s: summ.v_opt[s] is not None for s in SIDES}
    p3 = bool(summ.invertible and summ.psi_q <= 1e-12)

    # Best risk over functions affine on each half-line: weighted least squares per side.
    best = 0.0
    for s in SIDES:
        mask = x > 0 if s > 0 else x < 0
        if not mask.any():
            continue
        sw = np.sqrt(p[mask])
        design = np.column_stack([x[mask], np.ones(mask.sum())]) * sw[:, None]
        coef = np.linalg.lstsq(design, y[mask] * sw, rcond=None)[0]
        r = y[mask] - coef[0] * x[mask] - coef[1]
        best += 0.5 * float(p[mask] @ (r * r))
    # Bayes risk: residual around conditional means of atoms sharing an x value.
    bayes = 0.0
    for xv in np.unique(x):
        sel = x == xv
        if xv == 0:
            continue
        mean = (p[sel] @ y[sel]) / p[sel].sum()
        bayes += 0.5 * float(p[sel] @ (y[sel] - mean) ** 2)
    gap = float(np.min(np.abs(x)))
    return AssumptionReport(p1, gap, p3, best - bayes, summ.psi_q)


def _zero_intercept_ordinate(xs, ys, xn) -> float:
    """y' such that the least-squares line through (xs, ys) + (xn, y') has intercept 0."""
    sxx = xs @ xs + xn * xn
    sx = xs.sum() + xn
    coef = xs @ xs - xs.sum() * xn
    if abs(coef) <= 1e-14 * max(1.0, xs @ xs):
        raise NumericalError("degenerate augmentation equation")
    return -(sxx * ys.sum() - sx * (xs @ ys)) / coef


def augment_three_points(D: Dataset) -> Dataset:
    """Add at most three points so both sides have invertible moments and zero optimal intercept."""
    if np.any(D.x == 0):
        raise DomainError("augmentation requires all x != 0")
    x, y = list(D.x), list(D.y)
    if not any(v > 0 for v in x):
        x.append(1.0)
        y.append(0.0)
    if not any(v < 0 for v in x):
        x.append(-1.0)
        y.append(0.0)
    cur = Dataset(np.array(x), np.array(y))
    summ = regression_summary(cur)
    for s in SIDES:
        v = summ.v_opt[s]
        if v is not None and abs(v[1]) <= 1e-12:
            continue
        side = cur.side(s)
        xn = 1.0 + side.x.max() if s > 0 else side.x.min() - 1.0
        x.append(xn)
        y.append(_zero_intercept_ordinate(side.x, side.y, xn))
    if len(x) == D.n:
        return D
    return Dataset(np.array(x), np.array(y))


def embed(D: Dataset, z) -> EmbeddedDataset:
    z = np.asarray(z, dtype=float).reshape(-1)
    if abs(np.linalg.norm(z) - 1.0) > 1e-12:
        raise DomainError("embedding direction must be a unit vector")
    return EmbeddedDataset(np.outer(D.x, z), D.y.copy())


def write_dataset(path, D) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        if isinstance(D, EmbeddedDataset):
            d = D.X.shape[1]
            wr.writerow([f"x{i + 1}" for i in range(d)] + ["y"])
            for row, yv in zip(D.X, D.y):
                wr.writerow([repr(float(v)) for v in row] + [repr(float(yv))])
        else:
            wr.writerow(["x", "y"])
            for xv, yv in zip(D.x, D.y):
                wr.writerow([repr(float(xv)), repr(float(yv))])


def read_dataset(path):
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    try:
        vals = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry") from exc
    if header == ["x", "y"]:
        return Dataset(vals[:, 0], vals[:, 1])
    if header[-1] == "y" and header[:-1] == [f"x{i + 1}" for i in range(len(header) - 1)]:
        return EmbeddedDataset(vals[:, :-1], vals[:, -1])
    raise ConfigError(f"{path}: header must be x,y or x1..xd,y")
