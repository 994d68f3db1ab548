"""Averaged and CLT coefficients of a switching diffusion.

b_bar(x)      = sum_j b(x, j) mu^x_j
sigma_bar(x)  = [sum_j sigma sigma^T(x, j) mu^x_j]^(1/2)
Theta(x)      = [sum_j (F Phi^T + Phi F^T)(x, j) mu^x_j]^(1/2),  F = b - b_bar

and the gradients of b_bar and sigma that drive the linearized deviation
equation.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .chain import (GeneratorField, invariant_measure, invariant_measure_batch,
                    measure_gradient_batch)
from .errors import NotPSDError
from .poisson import StateFunctionField, solve_poisson, solve_poisson_batch
from .polynomial import PolyArray

PSD_CLAMP = 1e-10
SYMMETRY_TOL = 1e-12


@dataclass
class SwitchModel:
    """Drift b(x, i), diffusion sigma(x, i) and generator field Q(x)."""

    n: int
    d: int
    m0: int
    drift: StateFunctionField
    diffusion: PolyArray  # shape (m0, n, d)
    generator: GeneratorField
    name: str = "inline"

    def __post_init__(self):
        if self.drift.poly.shape != (self.m0, self.n) or self.drift.n != self.n:
            raise ValueError(f"drift shape {self.drift.poly.shape} does not match (m0, n)")
        if self.diffusion.shape != (self.m0, self.n, self.d) or self.diffusion.n != self.n:
            raise ValueError(f"diffusion shape {self.diffusion.shape} does not match (m0, n, d)")
        if self.generator.m0 != self.m0 or self.generator.n != self.n:
            raise ValueError("generator dimensions do not match the model")

    @property
    def sigma_switch_independent(self):
        c = self.diffusion.coeffs
        return bool(np.all(c == c[:, :1]))

    def drift_batch(self, X):
        return self.drift.evaluate_batch(X)

    def diffusion_batch(self, X):
        return self.diffusion.evaluate_batch(X)


def psd_sqrt(M):
    """Symmetric PSD square root by eigendecomposition.

    Eigenvalues in [-1e-10, 0) are clamped to zero; anything more negative
    raises :class:`NotPSDError`.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric")
    return psd_sqrt_batch(M[None])[0]


def psd_sqrt_batch(M):
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    w, V = np.linalg.eigh(M)
    low = w.min()
    if low < -PSD_CLAMP:
        raise NotPSDError(f"matrix has eigenvalue {low:.3e} below -{PSD_CLAMP}", eigenvalue=float(low))
    r = np.sqrt(np.maximum(w, 0.0))
    return np.einsum("...ij,...j,...kj->...ik", V, r, V)


class CenteredDrift:
    """F(x, i) = b(x, i) - b_bar(x) with its directional derivative."""

    def __init__(self, model: SwitchModel):
        self.model = model

    def evaluate(self, x):
        b = self.model.drift.evaluate(x)
        mu = invariant_measure(self.model.generator.evaluate(x))
        return b - mu @ b

    def derivative(self, x, direction):
        m = self.model
        Q = m.generator.evaluate(x)
        mu = invariant_measure(Q)
        dQ = m.generator.derivative(x, direction)
        dmu = measure_gradient_batch(Q[None], dQ[None], mu[None])[0]
        b = m.drift.evaluate(x)
        db = m.drift.derivative(x, direction)
        return db - (mu @ db + dmu @ b)


class AveragedModel:
    """Evaluators of the averaged and CLT coefficients of a :class:`SwitchModel`.

    ``theta`` memoizes per point on a 1e-8 grid; the cache is guarded by a
    lock so concurrent readers see either a miss or a complete entry.
    """

    def __init__(self, model: SwitchModel, cache: bool = True, cache_size: int = 100_000):
        self.model = model
        self.n, self.d, self.m0 = model.n, model.d, model.m0
        self._cache = {} if cache else None
        self._cache_size = cache_size
        self._lock = threading.Lock()
        self._sigma_grad = model.diffusion.jacobian()
        gen_const = model.generator.is_constant
        self._mu0 = self.mu(np.zeros(self.n)) if gen_const else None
        self._theta0 = (self.theta(np.zeros(self.n))
                        if gen_const and model.drift.poly.is_constant else None)
        self._sigbar0 = (self.diffusion(np.zeros(self.n))
                         if gen_const and model.diffusion.is_constant else None)

    # pointwise
    def mu(self, x):
        return invariant_measure(self.model.generator.evaluate(x))

    def drift(self, x):
        return self.mu(x) @ self.model.drift.evaluate(x)

    def sigma_sigma(self, x):
        s = self.model.diffusion.evaluate(x)
        return np.einsum("j,jkd,jld->kl", self.mu(x), s, s)

    def diffusion(self, x):
        return psd_sqrt(self.sigma_sigma(x))

    def sigma(self, x):
        """sigma(x) of a switch-independent diffusion (state 0)."""
        return self.model.diffusion.evaluate(x)[0]

    def symmetrized_flux(self, x):
        Q = self.model.generator.evaluate(x)
        mu = invariant_measure(Q)
        b = self.model.drift.evaluate(x)
        F = b - mu @ b
        phi = solve_poisson(Q, F, mu).phi
        FPhi = np.einsum("j,jk,jl->kl", mu, F, phi)
        return FPhi + FPhi.T

    def theta(self, x):
        x = np.asarray(x, dtype=float).reshape(self.n)
        if self._cache is None:
            return psd_sqrt(self.symmetrized_flux(x))
        key = tuple(np.round(x * 1e8).astype(np.int64).tolist())
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit.copy()
        val = psd_sqrt(self.symmetrized_flux(x))
        with self._lock:
            if len(self._cache) >= self._cache_size:
                self._cache.clear()
            self._cache[key] = val
        return val.copy()

    def drift_gradient(self, x):
        return self.drift_gradient_batch(np.asarray(x, dtype=float).reshape(1, self.n))[0]

    def sigma_gradient(self, x):
        """``(n, d, n)``: derivative of sigma(x) along the last axis."""
        return self.sigma_gradient_batch(np.asarray(x, dtype=float).reshape(1, self.n))[0]

    # batched
    def mu_batch(self, X):
        if self._mu0 is not None:
            return np.broadcast_to(self._mu0, (len(X), self.m0))
        return invariant_measure_batch(self.model.generator.evaluate_batch(X))

    def drift_batch(self, X):
        mu = self.mu_batch(X)
        return np.einsum("bj,bjk->bk", mu, self.model.drift.evaluate_batch(X))

    def sigma_sigma_batch(self, X):
        mu = self.mu_batch(X)
        s = self.model.diffusion.evaluate_batch(X)
        return np.einsum("bj,bjkd,bjld->bkl", mu, s, s)

    def diffusion_batch(self, X):
        if self._sigbar0 is not None:
            return np.broadcast_to(self._sigbar0, (len(X), self.n, self.n))
        return psd_sqrt_batch(self.sigma_sigma_batch(X))

    def sigma_batch(self, X):
        return self.model.diffusion.evaluate_batch(X)[:, 0]

    def theta_batch(self, X):
        if self._theta0 is not None:
            return np.broadcast_to(self._theta0, (len(X), self.n, self.n))
        Q = self.model.generator.evaluate_batch(X)
        mu = invariant_measure_batch(Q)
        b = self.model.drift.evaluate_batch(X)
        F = b - np.einsum("bj,bjk->bk", mu, b)[:, None, :]
        phi = solve_poisson_batch(Q, F, mu)
        FPhi = np.einsum("bj,bjk,bjl->bkl", mu, F, phi)
        return psd_sqrt_batch(FPhi + np.swapaxes(FPhi, 1, 2))

    def drift_gradient_batch(self, X):
        """``(B, n, n)`` with entry [k, l] = d b_bar_k / d x_l."""
        m = self.model
        X = np.asarray(X, dtype=float)
        mu = self.mu_batch(X)
        b = m.drift.evaluate_batch(X)
        db = m.drift.jacobian_batch(X)  # (B, m0, n, n)
        out = np.einsum("bj,bjkl->bkl", mu, db)
        if not m.generator.is_constant:
            Q = m.generator.evaluate_batch(X)
            for l in range(self.n):
                e = np.zeros(self.n)
                e[l] = 1.0
                dmu = measure_gradient_batch(Q, m.generator.derivative_batch(X, e), mu)
                out[:, :, l] += np.einsum("bj,bjk->bk", dmu, b)
        return out

    def sigma_gradient_batch(self, X):
        return np.stack([p.evaluate_batch(X)[:, 0] for p in self._sigma_grad], axis=-1)


def averaged_drift(model: SwitchModel, x):
    return AveragedModel(model, cache=False).drift(x)


def averaged_diffusion(model: SwitchModel, x):
    return AveragedModel(model, cache=False).diffusion(x)


def clt_theta(model: SwitchModel, x):
    return AveragedModel(model, cache=False).theta(x)


def averaged_drift_gradient(model: SwitchModel, x):
    return AveragedModel(model, cache=False).drift_gradient(x)


def monotonicity_constant(avg: AveragedModel, rng, pairs=10_000, low=-5.0, high=5.0):
    """Largest sampled <b_bar(x1) - b_bar(x2), x1 - x2> / |x1 - x2|^2."""
    X1 = rng.uniform(low, high, size=(pairs, avg.n))
    X2 = rng.uniform(low, high, size=(pairs, avg.n))
    diff = X1 - X2
    num = np.einsum("bk,bk->b", avg.drift_batch(X1) - avg.drift_batch(X2), diff)
    return float(np.max(num / np.einsum("bk,bk->b", diff, diff)))
