"""Path simulation of the two-scale switching system and its limits.

The two-scale system is discretized by frozen-coefficient splitting: on each
macro step [t_k, t_k + h] the position is frozen at X_k, the chain is
simulated exactly under Q(X_k) / eps, the drift is integrated against the
exact occupation times and the diffusion against Brownian sub-increments
split at the jump times.  The averaged and deviation-limit equations use
Euler-Maruyama on the same grid.

Two implementations share this scheme:

* single-path functions (``simulate_two_scale`` and friends) that record the
  full chain segments and sub-increments of one realization;
* batched kernels (``*_batch``) that advance many paths at once and keep
  only what the Monte Carlo estimators need.  Their chain clock carries the
  unused unit-rate exponential budget across step boundaries instead of
  redrawing holding times, which is exact for piecewise-constant rates and
  makes the chain path independent of h whenever Q does not depend on x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .averaging import AveragedModel, SwitchModel
from .chain import MAX_SEGMENT_JUMPS, ChainSegment, sample_chain_segment
from .errors import HypothesisError, PathDivergedError, StiffnessError

SIGMA_HYPOTHESIS = (
    "strong (pathwise) comparison with the averaged equation requires a diffusion "
    "coefficient that does not depend on the switching state, sigma(x, i) = sigma(x); "
    "with switching sigma there is no strong convergence (see the remark_5_4 model, "
    "whose mean-square error tends to 2t rather than 0)")


@dataclass(frozen=True)
class TimeGrid:
    T: float
    h: float

    def __post_init__(self):
        if self.h <= 0 or self.T <= 0:
            raise ValueError("T and h must be positive")
        if abs(self.M * self.h - self.T) > 1e-12:
            raise ValueError(f"T={self.T} is not an integer multiple of h={self.h}")

    @classmethod
    def from_steps(cls, T, M):
        return cls(float(T), float(T) / int(M))

    @property
    def M(self):
        return int(round(self.T / self.h))

    @property
    def times(self):
        return np.arange(self.M + 1) * self.h


@dataclass
class HybridPath:
    grid: TimeGrid
    X: np.ndarray                 # (M + 1, n)
    alpha: list                   # ChainSegment per macro step
    dW: np.ndarray                # (M, d)
    dW_sub: list                  # per step, (pieces, d)
    jumps: int = 0


@dataclass
class CoupledPaths:
    path: HybridPath
    Xbar: np.ndarray
    Z_eps: Optional[np.ndarray] = None
    limit: Optional[tuple] = None
    eps: float = field(default=1.0)


def require_strong_hypothesis(model: SwitchModel):
    if not model.sigma_switch_independent:
        raise HypothesisError(SIGMA_HYPOTHESIS)


def _check_finite(X, step):
    if not np.all(np.isfinite(X)):
        raise PathDivergedError(f"path diverged at step {step}", step=step)


# single-path API

def simulate_two_scale(model: SwitchModel, eps, x0, alpha0, grid: TimeGrid, rng) -> HybridPath:
    """One realization of (X^eps, alpha^eps) with full chain and noise records."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    n, d = model.n, model.d
    M, h = grid.M, grid.h
    X = np.empty((M + 1, n))
    X[0] = np.asarray(x0, dtype=float).reshape(n)
    dW = np.zeros((M, d))
    segments, subs = [], []
    state = int(alpha0)
    jumps = 0
    for k in range(M):
        x = X[k]
        Q = model.generator.evaluate(x) / eps
        seg = sample_chain_segment(Q, state, h, rng)
        b = model.drift.evaluate(x)
        sig = model.diffusion.evaluate(x)
        pieces = seg.intervals()
        inc = np.sqrt(np.array([e - s for _, s, e in pieces]))[:, None] * \
            rng.standard_normal((len(pieces), d))
        diff = sum(sig[i] @ inc[p] for p, (i, _, _) in enumerate(pieces))
        X[k + 1] = x + seg.occupation @ b + diff
        _check_finite(X[k + 1], k)
        dW[k] = inc.sum(axis=0)
        segments.append(seg)
        subs.append(inc)
        jumps += len(seg.jump_times)
        state = seg.final_state
    return HybridPath(grid, X, segments, dW, subs, jumps)


def _averaged_increment(avg: AveragedModel, X, dW, h, form):
    drift = avg.drift_batch(X) * h
    if form == "sigma":
        return drift + np.einsum("bkd,bd->bk", avg.sigma_batch(X), dW)
    return drift + np.einsum("bkl,bl->bk", avg.diffusion_batch(X), dW)


def averaged_form(model: SwitchModel, noise_dim=None):
    """'sigma' (switch-independent sigma driven by d-dim noise) or 'sigma_bar' (n-dim)."""
    if model.sigma_switch_independent and noise_dim in (None, model.d):
        return "sigma"
    return "sigma_bar"


def simulate_averaged(avg: AveragedModel, x0, grid: TimeGrid, dW=None, rng=None):
    """Euler-Maruyama path of the averaged equation, shape (M + 1, n).

    With a switch-independent sigma the averaged diffusion is sigma itself
    and ``dW`` has d columns; otherwise sigma_bar is used and ``dW`` must
    have n columns.  Fresh increments are drawn from ``rng`` when ``dW`` is
    None.
    """
    M, h = grid.M, grid.h
    form = averaged_form(avg.model, None if dW is None else np.shape(dW)[1])
    width = avg.d if form == "sigma" else avg.n
    if dW is None:
        dW = rng.standard_normal((M, width)) * math.sqrt(h)
    dW = np.asarray(dW, dtype=float)
    if dW.shape != (M, width):
        raise ValueError(f"dW has shape {dW.shape}, expected {(M, width)}")
    X = np.empty((M + 1, avg.n))
    X[0] = np.asarray(x0, dtype=float).reshape(avg.n)
    for k in range(M):
        X[k + 1] = X[k] + _averaged_increment(avg, X[k:k + 1], dW[k:k + 1], h, form)[0]
        _check_finite(X[k + 1], k)
    return X


def _clt_increment(avg, Xb, Z, dW, dWt, h):
    gb = avg.drift_gradient_batch(Xb)
    gs = avg.sigma_gradient_batch(Xb)
    th = avg.theta_batch(Xb)
    dZ = np.einsum("bkl,bl->bk", gb, Z) * h
    dZ += np.einsum("bkdl,bl,bd->bk", gs, Z, dW)
    dZ += np.einsum("bkl,bl->bk", th, dWt)
    dX = avg.drift_batch(Xb) * h + np.einsum("bkd,bd->bk", avg.sigma_batch(Xb), dW)
    return dX, dZ


def simulate_clt_limit(avg: AveragedModel, x0, grid: TimeGrid, dW, rng_tilde):
    """Joint Euler-Maruyama of the averaged path and the Gaussian deviation limit Z.

    Z solves dZ = grad b_bar Z dt + (grad sigma . Z) dW + Theta dW_tilde with
    Z_0 = 0, where W_tilde is an n-dimensional Brownian motion drawn from
    ``rng_tilde``, independent of ``dW``.
    """
    require_strong_hypothesis(avg.model)
    M, h = grid.M, grid.h
    dW = np.asarray(dW, dtype=float).reshape(M, avg.d)
    dWt = rng_tilde.standard_normal((M, avg.n)) * math.sqrt(h)
    Xb = np.empty((M + 1, avg.n))
    Z = np.zeros((M + 1, avg.n))
    Xb[0] = np.asarray(x0, dtype=float).reshape(avg.n)
    for k in range(M):
        dX, dZ = _clt_increment(avg, Xb[k:k + 1], Z[k:k + 1], dW[k:k + 1], dWt[k:k + 1], h)
        Xb[k + 1] = Xb[k] + dX[0]
        Z[k + 1] = Z[k] + dZ[0]
        _check_finite(Z[k + 1], k)
    return Xb, Z


def coupled_deviation(model: SwitchModel, avg: AveragedModel, eps, x0, alpha0, grid: TimeGrid,
                      rng, limit_rng=None, allow_switching_sigma=False) -> CoupledPaths:
    """Two-scale path, averaged path on the same noise, and Z^eps = (X^eps - X_bar)/sqrt(eps).

    With ``limit_rng`` the deviation limit (X_bar, Z) is also simulated on the
    same dW.  ``allow_switching_sigma`` permits the coupled comparison for a
    switching sigma (only meaningful as a negative control, n == d).
    """
    if not allow_switching_sigma:
        require_strong_hypothesis(model)
    elif not model.sigma_switch_independent and model.n != model.d:
        raise ValueError("coupled comparison with switching sigma needs n == d")
    path = simulate_two_scale(model, eps, x0, alpha0, grid, rng)
    Xbar = simulate_averaged(avg, x0, grid, dW=path.dW)
    Z_eps = (path.X - Xbar) / math.sqrt(eps)
    limit = None
    if limit_rng is not None:
        limit = simulate_clt_limit(avg, x0, grid, path.dW, limit_rng)
    return CoupledPaths(path, Xbar, Z_eps, limit, eps)


# batched kernels

class _FrozenCoefficients:
    """Per-step coefficient rows; constant polynomials are evaluated once."""

    def __init__(self, model: SwitchModel, eps):
        self.model = model
        self.eps = eps
        gen, drift, diff = model.generator, model.drift.poly, model.diffusion
        self.Q0 = gen.evaluate(np.zeros(model.n)) / eps if gen.is_constant else None
        self.b0 = drift.evaluate(np.zeros(model.n)) if drift.is_constant else None
        self.s0 = diff.evaluate(np.zeros(model.n)) if diff.is_constant else None

    def freeze(self, X):
        m = self.model
        self.Q = None if self.Q0 is not None else m.generator.evaluate_batch(X) / self.eps
        self.b = None if self.b0 is not None else m.drift.evaluate_batch(X)
        self.s = None if self.s0 is not None else m.diffusion.evaluate_batch(X)

    def q_rows(self, idx, states):
        return self.Q0[states] if self.Q is None else self.Q[idx, states]

    def b_rows(self, idx, states):
        return self.b0[states] if self.b is None else self.b[idx, states]

    def s_rows(self, idx, states):
        return self.s0[states] if self.s is None else self.s[idx, states]


def frozen_step_batch(coef: _FrozenCoefficients, X, state, clock, h, chain_rng, bm_rng):
    """Advance every path by one macro step.

    ``state`` and ``clock`` (remaining unit-rate exponential budget) are
    updated in place.  Returns (drift increment, diffusion increment, dW,
    jumps per path).
    """
    B = X.shape[0]
    n, d = coef.model.n, coef.model.d
    coef.freeze(X)
    drift = np.zeros((B, n))
    diff = np.zeros((B, n))
    dW = np.zeros((B, d))
    remaining = np.full(B, h)
    jumps = np.zeros(B, dtype=np.int64)
    idx = np.arange(B)
    full = True
    rounds = 0
    while idx.size:
        s = state[idx]
        rows = coef.q_rows(idx, s)
        rate = -rows[np.arange(idx.size), s]
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = np.where(rate > 0.0, clock[idx] / rate, np.inf)
        rem = remaining[idx]
        jump = tau < rem
        dt = np.where(jump, tau, rem)
        z = bm_rng.standard_normal((idx.size, d)) * np.sqrt(dt)[:, None]
        inc_b = coef.b_rows(idx, s) * dt[:, None]
        inc_s = np.einsum("knd,kd->kn", coef.s_rows(idx, s), z)
        if full:
            drift += inc_b
            diff += inc_s
            dW += z
            clock -= dt * np.where(rate > 0.0, rate, 0.0)
            remaining -= dt
        else:
            drift[idx] += inc_b
            diff[idx] += inc_s
            dW[idx] += z
            clock[idx] -= dt * np.where(rate > 0.0, rate, 0.0)
            remaining[idx] -= dt
        moved = idx[jump]
        if moved.size:
            out = rows[jump].copy()
            out[np.arange(moved.size), s[jump]] = 0.0
            np.maximum(out, 0.0, out=out)
            cum = np.cumsum(out, axis=1)
            u = chain_rng.random(moved.size) * cum[:, -1]
            nxt = (cum <= u[:, None]).sum(axis=1)
            state[moved] = np.minimum(nxt, out.shape[1] - 1)
            clock[moved] = chain_rng.standard_exponential(moved.size)
            jumps[moved] += 1
        idx = moved
        full = False
        rounds += 1
        if rounds > MAX_SEGMENT_JUMPS:
            raise StiffnessError(f"chain segment exceeded {MAX_SEGMENT_JUMPS} jumps in one step")
    return drift, diff, dW, jumps


@dataclass
class BatchResult:
    X_T: np.ndarray
    Xbar_T: Optional[np.ndarray] = None
    sup_dev: Optional[np.ndarray] = None   # max over grid points of |X - X_bar|
    paths: Optional[np.ndarray] = None
    bar_paths: Optional[np.ndarray] = None
    jumps: int = 0


def simulate_two_scale_batch(model: SwitchModel, eps, x0, alpha0, grid: TimeGrid, size,
                             chain_rng, bm_rng, avg: Optional[AveragedModel] = None,
                             record=False) -> BatchResult:
    """``size`` paths of the two-scale system; with ``avg`` also the coupled averaged paths."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    n = model.n
    M, h = grid.M, grid.h
    X = np.tile(np.asarray(x0, dtype=float).reshape(1, n), (size, 1))
    state = np.full(size, int(alpha0), dtype=np.int64)
    clock = chain_rng.standard_exponential(size)
    coef = _FrozenCoefficients(model, eps)
    form = None
    if avg is not None:
        form = averaged_form(model)
        if form == "sigma_bar" and model.n != model.d:
            raise ValueError("coupled comparison with switching sigma needs n == d")
        Xb = X.copy()
        sup = np.zeros(size)
    paths = np.empty((size, M + 1, n)) if record else None
    bar_paths = np.empty((size, M + 1, n)) if record and avg is not None else None
    if record:
        paths[:, 0] = X
        if bar_paths is not None:
            bar_paths[:, 0] = X
    total_jumps = 0
    for k in range(M):
        drift, diff, dW, jumps = frozen_step_batch(coef, X, state, clock, h, chain_rng, bm_rng)
        X = X + drift + diff
        _check_finite(X, k)
        total_jumps += int(jumps.sum())
        if avg is not None:
            Xb = Xb + _averaged_increment(avg, Xb, dW, h, form)
            _check_finite(Xb, k)
            np.maximum(sup, np.sqrt(np.einsum("bk,bk->b", X - Xb, X - Xb)), out=sup)
        if record:
            paths[:, k + 1] = X
            if bar_paths is not None:
                bar_paths[:, k + 1] = Xb
    if avg is None:
        return BatchResult(X, paths=paths, jumps=total_jumps)
    return BatchResult(X, Xb, sup, paths, bar_paths, total_jumps)


def simulate_averaged_batch(avg: AveragedModel, x0, grid: TimeGrid, size, rng):
    """Terminal values of independent averaged paths (sigma_bar form, n-dim noise)."""
    M, h = grid.M, grid.h
    form = averaged_form(avg.model)
    width = avg.d if form == "sigma" else avg.n
    X = np.tile(np.asarray(x0, dtype=float).reshape(1, avg.n), (size, 1))
    sq = math.sqrt(h)
    for k in range(M):
        dW = rng.standard_normal((size, width)) * sq
        X = X + _averaged_increment(avg, X, dW, h, form)
        _check_finite(X, k)
    return X


def simulate_clt_limit_batch(avg: AveragedModel, x0, grid: TimeGrid, size, bm_rng, tilde_rng):
    """Terminal values (X_bar_T, Z_T) of independent deviation-limit paths."""
    require_strong_hypothesis(avg.model)
    M, h = grid.M, grid.h
    Xb = np.tile(np.asarray(x0, dtype=float).reshape(1, avg.n), (size, 1))
    Z = np.zeros((size, avg.n))
    sq = math.sqrt(h)
    for k in range(M):
        dW = bm_rng.standard_normal((size, avg.d)) * sq
        dWt = tilde_rng.standard_normal((size, avg.n)) * sq
        dX, dZ = _clt_increment(avg, Xb, Z, dW, dWt, h)
        Xb = Xb + dX
        Z = Z + dZ
        _check_finite(Z, k)
    return Xb, Z
