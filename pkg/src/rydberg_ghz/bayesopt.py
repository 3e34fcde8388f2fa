"""Gaussian-process Bayesian optimization with expected improvement.

Inputs live in the unit cube internally; objectives are standardized before
fitting. The kernel is Matern 5/2 with one length scale per dimension.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf, dpotri, dpotrs
from scipy.optimize import minimize
from scipy.special import ndtr
from scipy.stats import qmc

log = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
JITTERS = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)

# log-space hyperparameter bounds: signal variance, length scales, noise variance
LOG_SIGNAL_BOUNDS = (math.log(1e-3), math.log(1e2))
LOG_LENGTH_BOUNDS = (math.log(1e-2), math.log(2e1))
LOG_NOISE_BOUNDS = (math.log(1e-8), math.log(1.0))


class FitError(RuntimeError):
    """Kernel matrix stayed ill-conditioned after the largest jitter."""


@dataclass(frozen=True)
class SearchSpace:
    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1D arrays of equal length")
        if np.any(lo >= hi):
            raise ValueError("every lower bound must be below its upper bound")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)

    def from_unit(self, u):
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        return self.lower + u * (self.upper - self.lower)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


def init_design(space: SearchSpace, n: int, seed: int) -> np.ndarray:
    """Latin-hypercube design: one point per stratum along every axis."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A7]))
    u = np.empty((n, space.dim))
    for k in range(space.dim):
        u[:, k] = (rng.permutation(n) + rng.random(n)) / n
    return space.from_unit(u)


def matern52(x1, x2, signal, lengths):
    """Kernel matrix between rows of ``x1`` and ``x2``."""
    a = x1 / lengths
    b = x2 / lengths
    r2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    r = np.sqrt(np.maximum(r2, 0.0))
    return signal * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


@numba.njit(cache=True)
def _kernel_parts(x, signal, inv_l2, noise):
    """Kernel matrix with noise and the length-scale derivative factor, both symmetric."""
    n, d = x.shape
    k = np.empty((n, n))
    q = np.empty((n, n))
    for i in range(n):
        k[i, i] = signal + noise
        q[i, i] = 0.0
        for j in range(i):
            r2 = 0.0
            for c in range(d):
                diff = x[i, c] - x[j, c]
                r2 += diff * diff * inv_l2[c]
            r = math.sqrt(r2)
            e = math.exp(-SQRT5 * r)
            k[i, j] = k[j, i] = signal * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * e
            q[i, j] = q[j, i] = signal * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e
    return k, q


@numba.njit(cache=True)
def _lml_gradient(x, k, q, alpha, kinv_lower, inv_l2, noise):
    """Gradient of the log marginal likelihood in log hyperparameters.

    ``kinv_lower`` only needs a valid lower triangle. ``k`` still carries the
    noise on its diagonal.
    """
    n, d = x.shape
    g_signal = 0.0
    g_len = np.zeros(d)
    g_noise = 0.0
    for i in range(n):
        w = alpha[i] * alpha[i] - kinv_lower[i, i]
        g_signal += w * (k[i, i] - noise)
        g_noise += w
        for j in range(i):
            w = alpha[i] * alpha[j] - kinv_lower[i, j]
            g_signal += 2.0 * w * k[i, j]
            wq = 2.0 * w * q[i, j]
            for c in range(d):
                diff = x[i, c] - x[j, c]
                g_len[c] += wq * diff * diff
    out = np.empty(d + 2)
    out[0] = 0.5 * g_signal
    for c in range(d):
        out[1 + c] = 0.5 * g_len[c] * inv_l2[c]
    out[1 + d] = 0.5 * noise * g_noise
    return out


def _neg_lml_and_grad(theta, x, y):
    """Negative log marginal likelihood and its gradient in log hyperparameters."""
    n, d = x.shape
    signal = math.exp(theta[0])
    inv_l2 = np.exp(-2.0 * theta[1 : 1 + d])
    noise = math.exp(theta[1 + d])
    k, q = _kernel_parts(x, signal, inv_l2, noise)
    chol, info = dpotrf(k, lower=1, clean=0, overwrite_a=0)
    if info != 0:
        return 1e25, np.zeros_like(theta)
    alpha, info = dpotrs(chol, y, lower=1)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    nll = 0.5 * y @ alpha + 0.5 * logdet + 0.5 * n * math.log(2 * math.pi)
    kinv, info = dpotri(chol, lower=1)
    if info != 0:
        return 1e25, np.zeros_like(theta)
    grad = _lml_gradient(x, k, q, alpha, kinv, inv_l2, noise)
    return nll, -grad


@dataclass(eq=False)
class Surrogate:
    """Fitted GP on unit-cube inputs with standardized targets."""

    x: np.ndarray
    y: np.ndarray
    y_mean: float
    y_std: float
    signal: float
    lengths: np.ndarray
    noise: float
    jitter: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    log_marginal_likelihood: float = 0.0

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([[math.log(self.signal)], np.log(self.lengths), [math.log(self.noise)]])


def log_marginal_likelihood(x, y_std, theta) -> float:
    """Log marginal likelihood of standardized targets for log hyperparameters ``theta``."""
    nll, _ = _neg_lml_and_grad(np.asarray(theta, float), np.ascontiguousarray(x, dtype=float),
                               np.asarray(y_std, float))
    return -nll


def hyperparameter_bounds(dim: int):
    return [LOG_SIGNAL_BOUNDS] + [LOG_LENGTH_BOUNDS] * dim + [LOG_NOISE_BOUNDS]


def gp_fit(x, y, n_restarts: int = 8, seed: int = 0, noise_floor: float = 1e-8,
           theta0=None) -> Surrogate:
    """Fit hyperparameters by multistart L-BFGS-B on the log marginal likelihood.

    Parameters
    ----------
    x : array, shape (n, d)
        Inputs already mapped to the unit cube.
    y : array, shape (n,)
        Raw objective values; standardized internally.
    n_restarts : int
        Number of local ascents. The first starts from ``theta0`` (or a
        fixed default), the others from seeded uniform draws inside the
        bounds.
    theta0 : array, optional
        Log hyperparameters ``(signal, lengths..., noise)`` for the first start.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = x.shape
    if n < 2 or len(np.unique(x, axis=0)) < 2:
        raise ValueError("gp_fit needs at least two distinct points")
    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    if not y_std > 0:
        y_std = 1.0
    ys = (y - y_mean) / y_std
    x = np.ascontiguousarray(x)
    bounds = hyperparameter_bounds(d)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    lo[-1] = max(lo[-1], math.log(noise_floor))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6F17]))
    if theta0 is None:
        theta0 = np.concatenate([[0.0], np.full(d, math.log(0.3)), [math.log(1e-4)]])
    starts = [np.asarray(theta0, dtype=float)]
    for _ in range(max(0, n_restarts - 1)):
        starts.append(lo + rng.random(d + 2) * (hi - lo))
    best = None
    for s in starts:
        res = minimize(
            _neg_lml_and_grad, np.clip(s, lo, hi), args=(x, ys), jac=True,
            method="L-BFGS-B", bounds=list(zip(lo, hi)),
            options={"maxiter": 200, "ftol": 1e-9, "gtol": 1e-4},
        )
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    signal = math.exp(theta[0])
    lengths = np.exp(theta[1 : 1 + d])
    noise = math.exp(theta[1 + d])
    return _factorize(x, ys, y_mean, y_std, signal, lengths, noise, -float(best.fun))


def _factorize(x, ys, y_mean, y_std, signal, lengths, noise, lml) -> Surrogate:
    n = x.shape[0]
    # exact pairwise differences keep the training kernel symmetric to the bit
    k, _ = _kernel_parts(x, signal, 1.0 / lengths**2, noise)
    for jitter in JITTERS:
        try:
            chol = np.linalg.cholesky(k + jitter * signal * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        alpha = solve_triangular(chol.T, solve_triangular(chol, ys, lower=True), lower=False)
        return Surrogate(x, ys, y_mean, y_std, signal, lengths, noise, jitter, chol, alpha, lml)
    raise FitError(f"kernel matrix not positive definite with jitter up to {JITTERS[-1]:g}")


def gp_posterior(model: Surrogate, x):
    """Predictive mean and variance in raw objective units.

    ``x`` may be a single point or an ``(m, d)`` array of unit-cube points.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    ks = matern52(x, model.x, model.signal, model.lengths)
    mean = ks @ model.alpha
    v = solve_triangular(model.chol, ks.T, lower=True)
    var = model.signal - np.sum(v * v, axis=0)
    if np.any(var < -1e-12 * model.signal):
        log.debug("negative posterior variance %g clamped", var.min())
    var = np.maximum(var, 0.0)
    mean = model.y_mean + model.y_std * mean
    var = var * model.y_std**2
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def ei_from_moments(mu, sigma, best, xi_raw=0.0):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gain = mu - best - xi_raw
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(sigma > 0, gain / np.where(sigma > 0, sigma, 1.0), 0.0)
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    # gain * cdf + sigma * pdf equals sigma * (z cdf + pdf) but stays finite as sigma -> 0
    ei = np.where(sigma > 0, gain * ndtr(z) + sigma * pdf, np.maximum(gain, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(model: Surrogate, x, best: float, xi: float = 0.01):
    """Expected improvement over ``best`` for maximization.

    ``xi`` is given in standardized units and rescaled with the target
    spread before use.
    """
    mean, var = gp_posterior(model, x)
    out = ei_from_moments(mean, np.sqrt(var), best, xi * model.y_std)
    return float(out) if np.ndim(out) == 0 else out


def propose_next(model: Surrogate, space: SearchSpace, best: float, seed: int, *,
                 xi: float = 0.01, n_candidates: int = 4096, n_refine: int = 4,
                 sweeps: int = 20) -> np.ndarray:
    """Maximize EI over scrambled Sobol candidates, then refine coordinatewise."""
    d = space.dim
    sobol = qmc.Sobol(d, scramble=True, seed=np.random.default_rng(np.random.SeedSequence([seed, 0x50B])))
    cand = sobol.random(n_candidates)
    ei = expected_improvement(model, cand, best, xi)
    if not np.any(ei > 0):
        # flat acquisition: fall back to the most uncertain candidate
        _, var = gp_posterior(model, cand)
        return space.from_unit(cand[int(np.argmax(var))])
    order = np.argsort(-ei, kind="stable")[:n_refine]
    # refine all starts together: each sweep scores the 2d single-coordinate
    # moves of every start and keeps the best move per start
    u = cand[order].copy()
    val = ei[order].copy()
    step = np.full(len(order), 0.05)
    rows = np.arange(d)
    for _ in range(sweeps):
        trials = np.repeat(u, 2 * d, axis=0).reshape(len(order), 2 * d, d)
        trials[:, rows, rows] = np.minimum(1.0, u + step[:, None])
        trials[:, d + rows, rows] = np.maximum(0.0, u - step[:, None])
        t_ei = expected_improvement(model, trials.reshape(-1, d), best, xi).reshape(len(order), 2 * d)
        j = np.argmax(t_ei, axis=1)
        gain = t_ei[np.arange(len(order)), j] > val
        u[gain] = trials[np.arange(len(order)), j][gain]
        val[gain] = t_ei[np.arange(len(order)), j][gain]
        step[~gain] *= 0.5
        if np.all(step < 1e-4):
            break
    k = int(np.argmax(val))
    best_u = u[k]
    return space.from_unit(best_u)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    params: tuple[float, ...]
    value: float
    best_so_far: float
    wall_time: float
    phase: str
    failed: bool = False


@dataclass
class OptimizationTrace:
    records: list[TraceRecord] = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.records])

    @property
    def params(self) -> np.ndarray:
        return np.array([r.params for r in self.records])

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.values))

    @property
    def best_params(self) -> np.ndarray:
        return np.array(self.records[self.best_index].params)

    @property
    def best_value(self) -> float:
        return float(self.records[self.best_index].value)

    def best_by(self, iteration: int) -> float:
        """Best value among the first ``iteration`` evaluations."""
        return float(np.max(self.values[:iteration]))

    def append(self, params, value, phase, wall_time, failed=False):
        best = value if not self.records else max(self.records[-1].best_so_far, value)
        rec = TraceRecord(len(self.records), tuple(float(p) for p in params), float(value),
                          float(best), float(wall_time), phase, failed)
        self.records.append(rec)
        return rec


def _safe_eval(objective, x, failure_value):
    try:
        value = float(objective(x))
    except Exception as exc:  # noqa: BLE001 - any failing evaluation scores as worst case
        log.warning("objective failed at %s: %s", np.array2string(np.asarray(x), precision=4), exc)
        return failure_value, True
    if not math.isfinite(value):
        return failure_value, True
    return value, False


def run_bo(objective: Callable[[np.ndarray], float], space: SearchSpace, budget: int = 300,
           n_init: int = 24, seed: int = 0, *, xi: float = 0.01, n_restarts: int = 8,
           n_candidates: int = 4096, failure_value: float = 0.0,
           initial_points: Sequence | None = None, trace: OptimizationTrace | None = None,
           callback: Callable[[OptimizationTrace], None] | None = None,
           init_map: Callable | None = None, refit_every: int = 10) -> OptimizationTrace:
    """Maximize ``objective`` over ``space``.

    The first ``n_init`` evaluations come from a Latin-hypercube design
    (optionally with ``initial_points`` substituted at the front); the rest
    follow fit -> propose -> evaluate. Passing a partially filled ``trace``
    resumes a run: recorded evaluations are reused and the same proposals
    follow because every random choice is keyed on ``(seed, iteration)``.
    ``init_map`` may evaluate the initial design in parallel; it receives
    a list of points and must return their values in order.

    Hyperparameters get the full multistart fit every ``refit_every``
    BO iterations; in between a single ascent starts from the last full
    fit. That anchor depends only on the trace prefix, so a resumed run
    recomputes it and proposes the same points.
    """
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    if budget < n_init:
        raise ValueError("budget must be at least n_init")
    if refit_every < 1:
        raise ValueError("refit_every must be >= 1")
    trace = OptimizationTrace() if trace is None else trace
    design = init_design(space, n_init, seed)
    if initial_points is not None:
        pts = np.atleast_2d(np.asarray(initial_points, dtype=float))
        if not all(space.contains(p) for p in pts):
            raise ValueError("initial points must lie inside the search space")
        design[: len(pts)] = pts[:n_init]
    t0 = time.perf_counter()
    pending = [design[i] for i in range(len(trace.records), n_init)]
    if pending:
        if init_map is not None:
            def guarded(x):
                return _safe_eval(objective, x, failure_value)
            results = init_map(guarded, pending)
        else:
            results = [_safe_eval(objective, x, failure_value) for x in pending]
        for x, (value, failed) in zip(pending, results):
            trace.append(x, value, "init", time.perf_counter() - t0, failed)
            if callback:
                callback(trace)
    anchor = None
    while len(trace.records) < budget:
        it = len(trace.records)
        u = space.to_unit(trace.params)
        y = trace.values
        last_full = it - (it - n_init) % refit_every
        if it == last_full:
            model = gp_fit(u, y, n_restarts=n_restarts, seed=seed * 1_000_003 + it)
            anchor = model.theta
        else:
            if anchor is None:
                anchor = gp_fit(u[:last_full], y[:last_full], n_restarts=n_restarts,
                                seed=seed * 1_000_003 + last_full).theta
            model = gp_fit(u, y, n_restarts=1, seed=seed * 1_000_003 + it, theta0=anchor)
        best = float(np.max(trace.values))
        x = propose_next(model, space, best, seed * 1_000_003 + it, xi=xi, n_candidates=n_candidates)
        value, failed = _safe_eval(objective, x, failure_value)
        trace.append(x, value, "bo", time.perf_counter() - t0, failed)
        if callback:
            callback(trace)
    return trace


def random_search(objective, space: SearchSpace, budget: int, seed: int) -> OptimizationTrace:
    """Uniform random baseline with the same trace format."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA5E]))
    trace = OptimizationTrace()
    t0 = time.perf_counter()
    for _ in range(budget):
        x = space.from_unit(rng.random(space.dim))
        value, failed = _safe_eval(objective, x, 0.0)
        trace.append(x, value, "init", time.perf_counter() - t0, failed)
    return trace
