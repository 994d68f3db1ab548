"""Poisson equation -Q(x) Phi(x, .) = F(x, .) on a finite state space."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .chain import (GeneratorField, _measure_gradient, _require_irreducible, _simpson_weights,
                    invariant_measure, transition_matrix, uniformization_rate)
from .errors import PreconditionError
from .polynomial import PolyArray

CENTERING_TOL = 1e-9


class StateFunctionField:
    """Per-state polynomial maps x -> F(x, i) in R^n, stored as a (m0, n) PolyArray."""

    def __init__(self, poly: PolyArray):
        if len(poly.shape) != 2:
            raise ValueError(f"state function field must have shape (m0, n), got {poly.shape}")
        self.poly = poly
        self.m0, self.dim = poly.shape
        self.n = poly.n

    def evaluate(self, x):
        return self.poly.evaluate(x)

    def evaluate_batch(self, X):
        return self.poly.evaluate_batch(X)

    def derivative(self, x, direction):
        return self.poly.directional(direction).evaluate(x)

    def jacobian_batch(self, X):
        """``(B, m0, dim, n)``."""
        return self.poly.jacobian_batch(X)

    def sup_norm(self, probes):
        """max_i |F(x, i)| per probe point."""
        vals = self.evaluate_batch(np.atleast_2d(probes))
        return np.abs(vals).max(axis=(1, 2))


@dataclass
class PoissonSolution:
    x: np.ndarray
    phi: np.ndarray
    residual: float
    centering: float


def check_centering(F, mu):
    """sup-norm of sum_i F(x, i) mu_i."""
    F = np.asarray(F, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != mu.shape[0]:
        raise ValueError(f"F has {F.shape[0]} states but mu has {mu.shape[0]}")
    return float(np.max(np.abs(mu @ F)))


def _augmented(Q, mu):
    # row 0 of Q is redundant (mu Q = 0); the centering row makes A nonsingular
    A = np.array(Q, dtype=float)
    A[0, :] = mu
    return A


def solve_poisson(Q, F, mu=None, x=None):
    """Centered solution of -Q Phi = F, one column per output coordinate."""
    Q = np.asarray(Q, dtype=float)
    F = np.asarray(F, dtype=float)
    squeeze = F.ndim == 1
    if squeeze:
        F = F[:, None]
    _require_irreducible(Q)
    if mu is None:
        mu = invariant_measure(Q)
    cen = check_centering(F, mu)
    if cen > CENTERING_TOL:
        raise PreconditionError(f"F is not centered under mu: residual {cen:.3e}")
    rhs = -F.copy()
    rhs[0, :] = 0.0
    lu = linalg.lu_factor(_augmented(Q, mu))
    phi = linalg.lu_solve(lu, rhs)
    phi += linalg.lu_solve(lu, rhs - _augmented(Q, mu) @ phi)
    residual = float(np.max(np.abs(Q @ phi + F)))
    centering = float(np.max(np.abs(mu @ phi)))
    return PoissonSolution(
        x=None if x is None else np.asarray(x, dtype=float),
        phi=phi[:, 0] if squeeze else phi, residual=residual, centering=centering)


def solve_poisson_batch(Q, F, mu):
    """Centered Poisson solutions for stacks Q ``(B, m0, m0)``, F ``(B, m0, n)``."""
    A = np.array(Q, dtype=float)
    A[:, 0, :] = mu
    rhs = -np.array(F, dtype=float)
    rhs[:, 0, :] = 0.0
    return np.linalg.solve(A, rhs)


def _tail(Q, F, T):
    return float(np.max(np.abs(transition_matrix(Q, T) @ F)))


def poisson_integral_oracle(Q, F, T_trunc=None, quad_steps=None):
    """Phi from the integral of P_t F over [0, T_trunc], by composite Simpson.

    Independent of :func:`solve_poisson`: only the semigroup is used.  The
    nodes are generated by repeated application of P_s for the step s.  The
    result is re-centered under mu afterwards.  With ``T_trunc=None`` the
    horizon starts at 50 and doubles (at most four times) until the tail
    ``|P_T F|`` is below 1e-8.
    """
    Q = np.asarray(Q, dtype=float)
    F = np.asarray(F, dtype=float)
    squeeze = F.ndim == 1
    if squeeze:
        F = F[:, None]
    if quad_steps is not None and quad_steps < 4:
        raise ValueError(f"quad_steps must be at least 4, got {quad_steps}")
    if T_trunc is None:
        T_trunc = 50.0
        for _ in range(4):
            if _tail(Q, F, T_trunc) < 1e-8:
                break
            T_trunc *= 2.0
    tail = _tail(Q, F, T_trunc)
    if tail >= 1e-8:
        warnings.warn(f"truncation tail |P_T F| = {tail:.2e} at T = {T_trunc} exceeds 1e-8",
                      RuntimeWarning, stacklevel=2)
    if quad_steps is None:
        lam = max(uniformization_rate(Q), 1.0)
        quad_steps = int(np.ceil(40.0 * lam * T_trunc))
    quad_steps += quad_steps % 2
    s = T_trunc / quad_steps
    Ps = transition_matrix(Q, s)
    w = _simpson_weights(quad_steps)
    acc = np.zeros_like(F)
    v = F.copy()
    for k in range(quad_steps + 1):
        acc += w[k] * v
        v = Ps @ v
    phi = s * acc
    mu = invariant_measure(Q)
    phi -= mu @ phi
    return phi[:, 0] if squeeze else phi


def ergodic_constant(Q, T_trunc=50.0, quad_steps=4000):
    """Integral over [0, T] of max_i sum_j |p_ij(t) - mu_j|.

    Since F is centered, |Phi(i)| <= this constant times max|F|.
    """
    Q = np.asarray(Q, dtype=float)
    mu = invariant_measure(Q)
    quad_steps += quad_steps % 2
    s = T_trunc / quad_steps
    Ps = transition_matrix(Q, s)
    w = _simpson_weights(quad_steps)
    P = np.eye(Q.shape[0])
    total = 0.0
    for k in range(quad_steps + 1):
        total += w[k] * np.max(np.abs(P - mu).sum(axis=1))
        P = P @ Ps
    return s * total


def poisson_gradient(gf: GeneratorField, Ffield, x, direction):
    """Directional derivative of the centered Poisson solution at x.

    Differentiating -Q Phi = F gives Q (d Phi) = -(dF + dQ Phi); the centering
    constraint differentiates to mu (d Phi) = -(d mu) Phi.  ``Ffield`` must be
    centered at every point and expose ``evaluate(x)`` and
    ``derivative(x, direction)``.
    """
    Q = gf.evaluate(x)
    dQ = gf.derivative(x, direction)
    mu = invariant_measure(Q)
    F = np.asarray(Ffield.evaluate(x), dtype=float)
    dF = np.asarray(Ffield.derivative(x, direction), dtype=float)
    sol = solve_poisson(Q, F, mu)
    dmu = _measure_gradient(Q, dQ, mu)
    rhs = -(dF + dQ @ sol.phi)
    rhs[0, :] = -(dmu @ sol.phi)
    return np.linalg.solve(_augmented(Q, mu), rhs)
