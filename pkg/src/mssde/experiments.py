"""Monte Carlo error estimates, order fits and closed-form reference curves.

Paths are split into fixed-size batches; batch ``k`` of epsilon index ``e``
draws from streams keyed by ``(seed, purpose, e, k)``.  Workers return
per-batch partial sums that are merged in batch order, so estimates are
bit-identical for any worker count.
"""

from __future__ import annotations

import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .averaging import AveragedModel
from .hybrid import (TimeGrid, require_strong_hypothesis, simulate_averaged_batch,
                     simulate_clt_limit_batch, simulate_two_scale_batch)
from .modelspec import BUILTINS, load_model, model_document
from .rng import AVERAGED, BROWNIAN, CHAIN, LIMIT, TILDE, stream

KINDS = ("strong_sup", "strong_fixed_t", "weak", "clt_weak")
TEST_FUNCTIONS = ("identity", "square", "bounded_smooth")


def test_function(name, X):
    """phi applied row-wise: identity and cos act on the first coordinate, square is |x|^2."""
    if name == "identity":
        return X[:, 0]
    if name == "square":
        return np.einsum("bk,bk->b", X, X)
    if name == "bounded_smooth":
        return np.cos(X[:, 0])
    raise ValueError(f"unknown test function {name!r}; expected one of {TEST_FUNCTIONS}")


def closed_form_reference(example_id, eps, t):
    """Exact error curves of the two-state examples (chain started in state 0)."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    decay = math.exp(-2.0 * t / eps)
    if example_id == "ex2_9_strong_mse":
        return eps * t + 0.5 * eps**2 * (decay - 1.0)
    if example_id == "ex2_9_clt_mean":
        return 0.5 * math.sqrt(eps) * (1.0 - decay)
    if example_id in ("ex2_9_clt_second", "ex2_11_weak_mean"):
        return 0.5 * eps * (1.0 - decay)
    if example_id == "remark5_4_mse":
        return 2.0 * t + eps * (decay - 1.0)
    raise ValueError(f"unknown closed-form id {example_id!r}")


# E phi(Z_t) for the deviation limit of example_2_9, where Z_t = W_tilde_t
_EX29_LIMIT_MOMENTS = {
    "identity": lambda t: 0.0,
    "square": lambda t: t,
    "bounded_smooth": lambda t: math.exp(-0.5 * t),
}


@dataclass
class ScenarioConfig:
    model: object
    eps: list
    kind: str = "strong_fixed_t"
    T: float = 1.0
    h: float = 2.0**-8
    n_paths: int = 10_000
    seed: int = 0
    test_function: str = "identity"
    p: float = 2.0
    x0: Optional[list] = None
    alpha0: int = 0
    batch_size: int = 8192
    limit: str = "auto"
    allow_uncoupled_check: bool = False

    def __post_init__(self):
        self.eps = [float(e) for e in self.eps]
        if not self.eps:
            raise ValueError("at least one eps value is required")
        if any(not 0.0 < e <= 1.0 for e in self.eps):
            raise ValueError("eps values must lie in (0, 1]")
        if len(set(self.eps)) != len(self.eps):
            raise ValueError("eps values must be distinct")
        if self.n_paths < 100:
            raise ValueError("n_paths must be at least 100")
        if self.kind not in KINDS:
            raise ValueError(f"unknown error kind {self.kind!r}; expected one of {KINDS}")
        if self.test_function not in TEST_FUNCTIONS:
            raise ValueError(f"unknown test function {self.test_function!r}")
        if self.limit not in ("auto", "simulate", "closed_form"):
            raise ValueError(f"unknown limit mode {self.limit!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        TimeGrid(self.T, self.h)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


@dataclass
class ErrorEstimate:
    eps: float
    estimate: float
    std_err: float
    n_paths: int
    seconds: float = 0.0
    reference: Optional[float] = None


@dataclass
class ConvergenceReport:
    config: dict
    model: dict
    kind: str
    estimates: list
    slope: Optional[float] = None
    intercept: Optional[float] = None
    r2: Optional[float] = None
    fit_transform: str = "none"
    reference_id: Optional[str] = None
    notes: list = field(default_factory=list)
    version: str = __version__

    def to_dict(self):
        d = asdict(self)
        d["estimates"] = [asdict(e) if not isinstance(e, dict) else e for e in self.estimates]
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["estimates"] = [ErrorEstimate(**e) for e in doc["estimates"]]
        return cls(**doc)


def fit_order(points):
    """Least squares of log2(error) on log2(eps): (slope, intercept, R^2)."""
    pts = list(points)
    if len(pts) < 3:
        raise ValueError("at least three (eps, error) points are required")
    e = np.array([p[0] for p in pts], dtype=float)
    err = np.array([p[1] for p in pts], dtype=float)
    if np.any(err <= 0.0) or np.any(e <= 0.0):
        raise ValueError("errors must be positive; a zero or negative estimate usually means "
                         "the Monte Carlo noise floor was reached (increase the path count)")
    x, y = np.log2(e), np.log2(err)
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(min(max(r2, 0.0), 1.0))


def reference_id(config: ScenarioConfig):
    model = config.model if isinstance(config.model, str) else None
    if model is None and isinstance(config.model, dict):
        model = config.model.get("builtin")
    k, phi = config.kind, config.test_function
    if model == "example_2_9" and k == "strong_fixed_t" and config.p == 2:
        return "ex2_9_strong_mse"
    if model == "remark_5_4" and k == "strong_fixed_t" and config.p == 2:
        return "remark5_4_mse"
    if model == "example_2_11" and k == "weak" and phi == "identity":
        return "ex2_11_weak_mean"
    if model == "example_2_9" and k == "clt_weak" and phi == "identity":
        return "ex2_9_clt_mean"
    if model == "example_2_9" and k == "clt_weak" and phi == "square":
        return "ex2_9_clt_second"
    return None


def worker_count():
    env = os.environ.get("MSSDE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _batches(n_paths, batch_size):
    sizes = [batch_size] * (n_paths // batch_size)
    if n_paths % batch_size:
        sizes.append(n_paths % batch_size)
    return sizes


def _run(func, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    ctx = multiprocessing.get_context("fork" if "fork" in multiprocessing.get_all_start_methods()
                                      else "spawn")
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks)), mp_context=ctx) as pool:
        return list(pool.map(func, tasks))


def _x0(config, model):
    return np.zeros(model.n) if config.x0 is None else np.asarray(config.x0, dtype=float)


def _moments(v):
    return np.array([v.size, float(np.sum(v)), float(np.sum(v * v))])


# batch workers (module level so they pickle)

def _coupled_task(task):
    config, model, e_idx, b_idx, size, what = task
    eps = config.eps[e_idx]
    grid = TimeGrid(config.T, config.h)
    avg = AveragedModel(model, cache=False)
    res = simulate_two_scale_batch(
        model, eps, _x0(config, model), config.alpha0, grid, size,
        stream(config.seed, CHAIN, e_idx, b_idx), stream(config.seed, BROWNIAN, e_idx, b_idx),
        avg=avg)
    if what == "strong_fixed_t":
        dev = res.X_T - res.Xbar_T
        return _moments(np.sqrt(np.einsum("bk,bk->b", dev, dev)) ** config.p)
    if what == "strong_sup":
        return _moments(res.sup_dev ** config.p)
    Z = (res.X_T - res.Xbar_T) / math.sqrt(eps)
    return _moments(test_function(config.test_function, Z))


def _two_scale_task(task):
    config, model, e_idx, b_idx, size = task
    grid = TimeGrid(config.T, config.h)
    res = simulate_two_scale_batch(
        model, config.eps[e_idx], _x0(config, model), config.alpha0, grid, size,
        stream(config.seed, CHAIN, e_idx, b_idx), stream(config.seed, BROWNIAN, e_idx, b_idx))
    return _moments(test_function(config.test_function, res.X_T))


def _averaged_task(task):
    config, model, e_idx, b_idx, size = task
    grid = TimeGrid(config.T, config.h)
    X = simulate_averaged_batch(AveragedModel(model, cache=False), _x0(config, model), grid,
                                size, stream(config.seed, AVERAGED, e_idx, b_idx))
    return _moments(test_function(config.test_function, X))


def _limit_task(task):
    config, model, e_idx, b_idx, size = task
    grid = TimeGrid(config.T, config.h)
    _, Z = simulate_clt_limit_batch(
        AveragedModel(model, cache=False), _x0(config, model), grid, size,
        stream(config.seed, LIMIT, e_idx, b_idx), stream(config.seed, TILDE, e_idx, b_idx))
    return _moments(test_function(config.test_function, Z))


def _merge(parts):
    total = np.zeros(3)
    for p in parts:
        total = total + p
    n, s1, s2 = total
    mean = s1 / n
    var = max((s2 - n * mean * mean) / (n - 1), 0.0) if n > 1 else 0.0
    return float(mean), float(var), int(n)


def _tasks(config, model, e_idx, *extra):
    return [(config, model, e_idx, b, size) + extra
            for b, size in enumerate(_batches(config.n_paths, config.batch_size))]


def _reference(config, eps):
    rid = reference_id(config)
    return None if rid is None else closed_form_reference(rid, eps, config.T)


def mc_strong_error(config: ScenarioConfig, model=None, workers=None):
    """E |X^eps - X_bar|^p at T (strong_fixed_t) or of the grid sup (strong_sup), per eps."""
    model = model or load_model(config.model)
    if not config.allow_uncoupled_check:
        require_strong_hypothesis(model)
    workers = worker_count() if workers is None else workers
    kind = config.kind if config.kind.startswith("strong") else "strong_fixed_t"
    out = []
    for e_idx, eps in enumerate(config.eps):
        t0 = time.perf_counter()
        mean, var, n = _merge(_run(_coupled_task, _tasks(config, model, e_idx, kind), workers))
        out.append(ErrorEstimate(eps, mean, math.sqrt(var / n), n,
                                 time.perf_counter() - t0, _reference(config, eps)))
    return out


def mc_weak_error(config: ScenarioConfig, model=None, workers=None):
    """|mean phi(X^eps_T) - mean phi(X_bar_T)| from independent path populations."""
    model = model or load_model(config.model)
    workers = worker_count() if workers is None else workers
    out = []
    for e_idx, eps in enumerate(config.eps):
        t0 = time.perf_counter()
        m1, v1, n1 = _merge(_run(_two_scale_task, _tasks(config, model, e_idx), workers))
        m2, v2, n2 = _merge(_run(_averaged_task, _tasks(config, model, e_idx), workers))
        out.append(ErrorEstimate(eps, abs(m1 - m2), math.sqrt(v1 / n1 + v2 / n2), n1,
                                 time.perf_counter() - t0, _reference(config, eps)))
    return out


def limit_closed_form(config: ScenarioConfig):
    """E phi(Z_T) in closed form, or None when unavailable for this model."""
    model = config.model if isinstance(config.model, str) else config.model.get("builtin")
    if model == "example_2_9":
        return _EX29_LIMIT_MOMENTS[config.test_function](config.T)
    return None


def mc_clt_error(config: ScenarioConfig, model=None, workers=None):
    """|mean phi(Z^eps_T) - E phi(Z_T)| with Z^eps from coupled paths."""
    model = model or load_model(config.model)
    require_strong_hypothesis(model)
    workers = worker_count() if workers is None else workers
    closed = None if config.limit == "simulate" else limit_closed_form(config)
    if config.limit == "closed_form" and closed is None:
        raise ValueError("no closed-form deviation limit is available for this model")
    out = []
    for e_idx, eps in enumerate(config.eps):
        t0 = time.perf_counter()
        m1, v1, n1 = _merge(_run(_coupled_task, _tasks(config, model, e_idx, "clt"), workers))
        if closed is not None:
            m2, var2 = closed, 0.0
        else:
            m2, v2, n2 = _merge(_run(_limit_task, _tasks(config, model, e_idx), workers))
            var2 = v2 / n2
        out.append(ErrorEstimate(eps, abs(m1 - m2), math.sqrt(v1 / n1 + var2), n1,
                                 time.perf_counter() - t0, _reference(config, eps)))
    return out


def run_experiment(config: ScenarioConfig, workers=None) -> ConvergenceReport:
    """Dispatch on the error kind and fit the order when at least three eps are given."""
    model = load_model(config.model)
    notes = []
    if config.kind.startswith("strong"):
        estimates = mc_strong_error(config, model, workers)
        transform = "pth_root"
        if config.kind == "strong_sup":
            notes.append("sup norm taken over grid points only")
        if not model.sigma_switch_independent:
            notes.append("diagnostic coupled comparison with switching sigma")
    elif config.kind == "weak":
        estimates = mc_weak_error(config, model, workers)
        transform = "none"
    else:
        estimates = mc_clt_error(config, model, workers)
        transform = "none"
        if config.limit != "simulate" and limit_closed_form(config) is not None:
            notes.append("limit moments in closed form")
    slope = intercept = r2 = None
    if len(estimates) >= 3:
        vals = [e.estimate ** (1.0 / config.p) if transform == "pth_root" else e.estimate
                for e in estimates]
        if all(v > 0 for v in vals):
            slope, intercept, r2 = fit_order(zip([e.eps for e in estimates], vals))
        else:
            notes.append("order fit skipped: nonpositive estimate")
    return ConvergenceReport(
        config=config.to_dict(), model=model_document(config.model), kind=config.kind,
        estimates=estimates, slope=slope, intercept=intercept, r2=r2, fit_transform=transform,
        reference_id=reference_id(config), notes=notes)


__all__ = ["BUILTINS", "ConvergenceReport", "ErrorEstimate", "ScenarioConfig",
           "closed_form_reference", "fit_order", "mc_clt_error", "mc_strong_error",
           "mc_weak_error", "run_experiment"]
