"""Trial runner, early stopping and Monte Carlo experiments."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import engine
from .certify import Anchor, certify_from_anchor
from .data import FiniteDistribution, Dataset, example_distribution, regression_summary, sample
from .errors import ConfigError, NumericalError, SingularityError
from .network import HE, Distribution, Hyperparams, InitSpec, Weights, empirical_loss, init_weights
from .reduced import ActivationPattern, comparator_operator, outer_pieces, sigma_moments, v_opt_vector

OUTCOMES = ("crossed", "certified_never", "early_stopped_no_cross", "max_steps_no_cross", "aborted")

# stream ids for per-trial seed derivation
DATA, INIT, VALID, SHUFFLE = 0, 1, 2, 3


def derive_seed(base_seed: int, trial: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base_seed) & (2 ** 64 - 1), int(trial), int(stream)])


def rng_for(base_seed: int, trial: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, trial, stream))


@dataclass(frozen=True)
class StepSize:
    """``auto`` (1/lambda_max(H)), ``fixed`` (value) or ``scaled`` (value / m)."""
    mode: str = "auto"
    value: float = 0.0

    @classmethod
    def parse(cls, text) -> "StepSize":
        if isinstance(text, StepSize):
            return text
        text = str(text).strip()
        try:
            if text == "auto":
                return cls("auto")
            if text.startswith("c/m:"):
                return cls("scaled", float(text[4:]))
            return cls("fixed", float(text))
        except ValueError as exc:
            raise ConfigError(f"bad step size {text!r}") from exc

    def __str__(self):
        return {"auto": "auto", "scaled": f"c/m:{self.value:g}"}.get(self.mode, f"{self.value:g}")


@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int = 10
    min_delta: float = 1e-8
    check_period: int = 1000


@dataclass(frozen=True)
class TrialConfig:
    m: int
    n: int | None = None
    optimizer: str = "gd"
    h: StepSize = StepSize()
    alpha: float = 0.0
    dist_a: Distribution = HE
    dist_w: Distribution = HE
    distribution: FiniteDistribution = field(default_factory=example_distribution)
    early_stop: EarlyStopConfig | None = None
    max_steps: int | None = None
    x_target: float = 1.0
    batch_size: int = 16
    cert_period: int = 1000
    certify: bool = True
    seed: int = 0
    initial_weights: Weights | None = None

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ConfigError("m must be a positive integer")
        if self.n is not None and (int(self.n) != self.n or self.n < 1):
            raise ConfigError("n must be a positive integer")
        if self.optimizer not in ("gd", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not self.x_target > 0:
            raise ConfigError("x_target must be positive")
        if self.batch_size < 1 or self.cert_period < 1:
            raise ConfigError("batch size and certification period must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be nonnegative")
        h = StepSize.parse(self.h)
        if h.mode != "auto" and not h.value > 0:
            raise ConfigError("step size must be positive")
        object.__setattr__(self, "h", h)

    @property
    def n_eff(self) -> int:
        return self.n if self.n is not None else self.m ** 2

    @property
    def steps_limit(self) -> int:
        if self.max_steps is not None:
            return int(self.max_steps)
        return 200_000 if self.optimizer == "gd" else 1_000_000

    def echo(self) -> dict:
        return {"m": self.m, "n": self.n_eff, "optimizer": self.optimizer, "h": str(self.h),
                "alpha": self.alpha, "shift_delta": self.distribution.shift_delta,
                "early_stop": self.early_stop is not None, "max_steps": self.steps_limit,
                "x_target": self.x_target, "batch_size": self.batch_size, "seed": self.seed}


@dataclass
class EarlyStopping:
    """Validation monitor: improvement means dropping below the reference by more than min_delta."""
    patience: int = 10
    min_delta: float = 1e-8
    reference: float = math.inf
    wait: int = 0
    checks: int = 0

    def update(self, val_loss: float) -> bool:
        """Record one check; return True when training should stop."""
        self.checks += 1
        if val_loss < self.reference - self.min_delta:
            self.reference = val_loss
            self.wait = 0
        else:
            self.wait += 1
        return self.wait >= self.patience


def early_stop_check(monitor: EarlyStopping, val_loss: float) -> bool:
    return monitor.update(val_loss)


@dataclass(frozen=True)
class TrialResult:
    outcome: str
    steps_run: int
    first_crossing_step: int | None
    final_loss: float
    kappa_u_final: float
    wall_time: float
    h: float = math.nan
    certified_at: int | None = None
    certificate: str = ""
    sign_flips: int = 0
    fallback: bool = False
    detail: str = ""
    weights: Weights | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("weights")
        return d


def resolve_h(cfg: TrialConfig, op) -> float:
    if cfg.h.mode == "auto":
        return op.h_auto
    if cfg.h.mode == "scaled":
        return cfg.h.value / cfg.m
    return cfg.h.value


class _Run:
    """Mutable training state for one trial, switching between fast and full kernels."""

    def __init__(self, cfg, D, summary, W0, h):
        self.cfg, self.D, self.summary = cfg, D, summary
        self.h = h
        self.a, self.b, self.w = W0.a.copy(), W0.b.copy(), W0.w.copy()
        self.st = np.array([W0.c, 0.0])
        self.tau = np.sign(W0.a).astype(np.int64)
        self.x_pattern = D.x_underbar
        self.fast = bool(np.all(self.tau != 0))
        self.flips = 0
        self.M, self.u0 = engine.summary_arrays(summary)

    @property
    def weights(self) -> Weights:
        return Weights(self.a.copy(), self.b.copy(), float(self.st[0]), self.w.copy())

    def gd(self, n_steps):
        done = 0
        while done < n_steps:
            if self.fast:
                status, k, f = engine.fp_gd_run(self.a, self.b, self.w, self.tau, self.st, self.M, self.u0,
                                                self.cfg.alpha, self.h, self.cfg.x_target, self.x_pattern,
                                                n_steps - done)
                self.flips += f
                done += k
                if status == engine.PATTERN_BROKEN:
                    self.fast = False
                    continue
            else:
                status, k = engine.full_gd_run(self.a, self.b, self.w, self.st, self.D.x, self.D.y,
                                               self.cfg.alpha, self.h, self.cfg.x_target, n_steps - done)
                done += k
            if status != engine.RUNNING:
                return status, done
        return engine.RUNNING, done

    def sgd(self, perm, starts, stops):
        done, total = 0, starts.shape[0]
        while done < total:
            sl = slice(done, total)
            if self.fast:
                status, k, f = engine.fp_sgd_run(self.a, self.b, self.w, self.tau, self.st, self.D.x, self.D.y,
                                                 perm, starts[sl], stops[sl], self.cfg.alpha, self.h,
                                                 self.cfg.x_target, self.x_pattern)
                self.flips += f
                done += k
                if status == engine.PATTERN_BROKEN:
                    self.fast = False
                    continue
            else:
                status, k = engine.full_sgd_run(self.a, self.b, self.w, self.st, self.D.x, self.D.y, perm,
                                                starts[sl], stops[sl], self.cfg.alpha, self.h, self.cfg.x_target)
                done += k
            if status != engine.RUNNING:
                return status, done
        return engine.RUNNING, done


def _try_certify(run: _Run, cfg, summary, params, op_ref, anchor0):
    """Certificate from initialisation first, then re-anchored at the current step."""
    if not (run.fast and summary.invertible):
        return None
    W = run.weights
    tau = ActivationPattern(run.tau.copy())
    v_bar = outer_pieces(W, tau, cfg.alpha) - v_opt_vector(summary)
    if run.flips == 0 and op_ref is not None:
        cert = certify_from_anchor(float(run.st[1]), anchor0, op_ref, summary, v_bar, params, cfg.x_target)
        if cert.ok:
            return "init"
    try:
        anchor = Anchor.from_weights(W, tau)
        op = comparator_operator(anchor.Sigma, summary, cfg.alpha)
    except NumericalError:
        return None
    cert = certify_from_anchor(0.0, anchor, op, summary, v_bar, params, cfg.x_target)
    return "rebased" if cert.ok else None


def trial_dataset(cfg: TrialConfig, trial: int = 0) -> Dataset:
    return sample(cfg.distribution, cfg.n_eff, rng_for(cfg.seed, trial, DATA)).for_training()


def run_trial(cfg: TrialConfig, trial: int = 0) -> TrialResult:
    """Run one seeded trial; ``trial`` selects the derived seed streams."""
    t0 = time.perf_counter()
    D = trial_dataset(cfg, trial)
    summary = regression_summary(D)
    init_seed = int(derive_seed(cfg.seed, trial, INIT).generate_state(1, np.uint64)[0])
    W0 = cfg.initial_weights
    if W0 is None:
        W0 = init_weights(InitSpec(cfg.dist_a, cfg.dist_w, init_seed), Hyperparams(cfg.m, 1.0, cfg.alpha))
    elif W0.m != cfg.m:
        raise ConfigError("initial weights do not match m")

    op_ref = None
    try:
        if summary.invertible:
            op_ref = comparator_operator(sigma_moments(W0, ActivationPattern(np.sign(W0.a).astype(int))),
                                         summary, cfg.alpha)
        elif cfg.h.mode == "auto":
            raise SingularityError("singular moment matrix")
    except NumericalError as exc:
        if cfg.h.mode == "auto":
            return TrialResult("aborted", 0, None, math.nan, 0.0, time.perf_counter() - t0, detail=str(exc))
    h = resolve_h(cfg, op_ref)
    params = Hyperparams(cfg.m, h, cfg.alpha)

    val = None
    monitor = None
    if cfg.early_stop is not None:
        val = sample(cfg.distribution, cfg.n_eff, rng_for(cfg.seed, trial, VALID))
        monitor = EarlyStopping(cfg.early_stop.patience, cfg.early_stop.min_delta)
        monitor.reference = empirical_loss(W0, params, val)
        period = cfg.early_stop.check_period
    else:
        period = cfg.cert_period

    run = _Run(cfg, D, summary, W0, h)
    anchor0 = Anchor.from_weights(W0, ActivationPattern(run.tau.copy())) if run.fast else None
    limit = cfg.steps_limit
    steps = 0
    crossing, cert_step, cert_kind = None, None, ""

    def finish(outcome, detail=""):
        W = run.weights
        return TrialResult(outcome, steps, crossing, empirical_loss(W, params, D), float(run.st[1]),
                           time.perf_counter() - t0, h, cert_step, cert_kind, run.flips, not run.fast, detail, W)

    if cfg.optimizer == "gd":
        cert_on = cfg.certify and op_ref is not None
        if cert_on:
            kind = _try_certify(run, cfg, summary, params, op_ref, anchor0)
            if kind:
                cert_kind, cert_step = kind, 0
                return finish("certified_never")
        while steps < limit:
            status, k = run.gd(min(period, limit - steps))
            steps += k
            if status == engine.CROSSED:
                crossing = steps
                return finish("crossed")
            if status == engine.NONFINITE:
                return finish("aborted", "non-finite weights")
            if steps % period:
                break
            if monitor is not None and monitor.update(empirical_loss(run.weights, params, val)):
                return finish("early_stopped_no_cross")
            if cert_on and steps % cfg.cert_period == 0:
                kind = _try_certify(run, cfg, summary, params, op_ref, anchor0)
                if kind:
                    cert_step, cert_kind = steps, kind
                    return finish("certified_never")
        return finish("max_steps_no_cross")

    # SGD: counts batches; checks every `period` batches
    rng = rng_for(cfg.seed, trial, SHUFFLE)
    n, bs = D.n, cfg.batch_size
    edges = np.arange(0, n, bs)
    starts_all, stops_all = edges, np.minimum(edges + bs, n)
    perm, pos = rng.permutation(n), 0
    while steps < limit:
        todo = min(period - steps % period, limit - steps)
        while todo > 0:
            take = min(todo, len(starts_all) - pos)
            status, k = run.sgd(perm, starts_all[pos:pos + take], stops_all[pos:pos + take])
            steps += k
            todo -= k
            pos += k
            if status == engine.CROSSED:
                crossing = steps
                return finish("crossed")
            if status == engine.NONFINITE:
                return finish("aborted", "non-finite weights")
            if pos == len(starts_all):
                perm, pos = rng.permutation(n), 0
        if steps % period == 0 and monitor is not None:
            if monitor.update(empirical_loss(run.weights, params, val)):
                return finish("early_stopped_no_cross")
    return finish("max_steps_no_cross")


def wilson_interval(k: int, n: int, z: float = 1.959963984540054):
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class MonteCarloReport:
    trials: int
    crossings: int
    p_hat: float
    wilson_ci_95: tuple
    outcome_counts: dict
    config: dict
    mean_steps: float = 0.0

    @property
    def max_steps_hits(self) -> int:
        return self.outcome_counts.get("max_steps_no_cross", 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["wilson_ci_95"] = list(self.wilson_ci_95)
        d["max_steps_hits"] = self.max_steps_hits
        return d


def _run_block(args):
    cfg, indices = args
    return [(i, run_trial(cfg, i)) for i in indices]


def run_trials(cfg: TrialConfig, trials: int, threads: int = 1) -> list:
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    idx = list(range(trials))
    if threads <= 1:
        return [run_trial(cfg, i) for i in idx]
    blocks = [idx[i::threads * 4] for i in range(min(trials, threads * 4))]
    out = {}
    with ProcessPoolExecutor(max_workers=threads) as pool:
        for chunk in pool.map(_run_block, [(cfg, b) for b in blocks]):
            out.update(chunk)
    return [out[i] for i in idx]


def summarize(cfg: TrialConfig, results) -> MonteCarloReport:
    counts = {o: 0 for o in OUTCOMES}
    for r in results:
        counts[r.outcome] += 1
    k, n = counts["crossed"], len(results)
    return MonteCarloReport(n, k, k / n, wilson_interval(k, n), counts, cfg.echo(),
                            float(np.mean([r.steps_run for r in results])))


def monte_carlo(cfg: TrialConfig, trials: int, threads: int = 1) -> MonteCarloReport:
    return summarize(cfg, run_trials(cfg, trials, threads))


# --- experiments ---------------------------------------------------------------

VARIANTS = ("gd", "gd_es", "sgd_es", "sgd_es_small_h")
CSV_HEADER = ["variant", "m", "n", "trials", "crossings", "p_hat", "ci_lo", "ci_hi", "max_steps_hits"]


def variant_config(variant: str, m: int, **overrides) -> TrialConfig:
    es = EarlyStopConfig()
    presets = {
        "gd": dict(optimizer="gd"),
        "gd_es": dict(optimizer="gd", early_stop=es),
        "sgd_es": dict(optimizer="sgd", early_stop=es),
        "sgd_es_small_h": dict(optimizer="sgd", early_stop=es, h=StepSize("scaled", 0.01)),
    }
    if variant not in presets:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    kw = {**presets[variant], **overrides}
    return TrialConfig(m=m, **kw)


def report_row(variant: str, rep: MonteCarloReport) -> dict:
    lo, hi = rep.wilson_ci_95
    return {"variant": variant, "m": rep.config["m"], "n": rep.config["n"], "trials": rep.trials,
            "crossings": rep.crossings, "p_hat": rep.p_hat, "ci_lo": lo, "ci_hi": hi,
            "max_steps_hits": rep.max_steps_hits}


def experiment_comparison(m_list, variant: str, trials: int, threads: int = 1, **overrides) -> list:
    rows = []
    for m in m_list:
        cfg = variant_config(variant, m, **overrides)
        rows.append(report_row(variant, monte_carlo(cfg, trials, threads)))
    return rows


def experiment_shift(m_list, delta: float, trials: int, threads: int = 1, **overrides) -> list:
    rows = []
    for m in m_list:
        cfg = TrialConfig(m=m, distribution=example_distribution(delta), **overrides)
        rows.append(report_row(f"shift_{delta:g}", monte_carlo(cfg, trials, threads)))
    return rows


def standin_dataset(n: int = 300, seed: int = 0) -> Dataset:
    """Synthetic stand-in for a trajectory demo (not a reproduction of any published data).

    x is uniform on [-4, -0.5] U [0.5, 4]; the conditional mean is a different
    sinusoid on each half-line plus Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    mag = rng.uniform(0.5, 4.0, n)
    x = mag * rng.choice([-1.0, 1.0], n)
    mean = np.where(x > 0, np.sin(1.5 * x) + 0.3 * x, 0.8 * np.cos(2.0 * x) - 0.2 * x)
    return Dataset(x, mean + 0.1 * rng.normal(size=n))


def log_schedule(l_max: int, base: float = 1.1) -> list:
    return sorted({int(math.floor(base ** l)) - 1 for l in range(l_max + 1)})


def experiment_trajectory(D: Dataset, m: int = 16, h: float = 0.002, alpha: float = 0.0,
                          l_max: int = 100, seed: int = 0, init: InitSpec | None = None) -> list:
    """Full-batch GD on a fixed dataset, logged at k = floor(1.1^l) - 1.

    Each row holds the loss above the two-sided affine optimum, v_bar of the
    outer affine pieces and every kink position.
    """
    D = D.for_training()
    summary = regression_summary(D)
    params = Hyperparams(m, h, alpha)
    spec = init or InitSpec(seed=seed)
    W = init_weights(replace(spec, seed=spec.seed), params)
    l_opt = summary.best_affine_loss()
    vopt = v_opt_vector(summary)
    a, b, w = W.a.copy(), W.b.copy(), W.w.copy()
    st = np.array([W.c, 0.0])
    rows, k = [], 0
    for target in log_schedule(l_max):
        if target > k:
            engine.full_gd_run(a, b, w, st, D.x, D.y, alpha, h, math.inf, target - k)
            k = target
        Wk = Weights(a.copy(), b.copy(), float(st[0]), w.copy())
        tau = ActivationPattern(np.where(Wk.a >= 0, 1, -1))
        vbar = outer_pieces(Wk, tau, alpha) - vopt
        with np.errstate(divide="ignore", invalid="ignore"):
            kinks = np.where(Wk.a != 0, -Wk.b / Wk.a, np.nan)
        row = {"k": k, "loss_gap": empirical_loss(Wk, params, D) - l_opt,
               "p1bar": vbar[0], "pm1bar": vbar[1], "q1bar": vbar[2], "qm1bar": vbar[3]}
        row.update({f"kink_{i}": float(p) for i, p in enumerate(kinks)})
        rows.append(row)
    return rows
