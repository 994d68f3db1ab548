"""Finite-state continuous-time Markov chain linear algebra.

Generators whose off-diagonal rates are polynomials in a spatial point x,
invariant measures and their spatial derivatives, transition semigroups by
uniformization, and exact sampling of chain segments.

Probability vectors and stochastic matrices are returned as plain numpy
arrays; the invariants (positivity, unit row sums) are asserted in tests.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse.csgraph import connected_components
from scipy.special import pdtrc

from .errors import IrreducibilityError, ModelSpecError, StiffnessError
from .polynomial import PolyArray

log = logging.getLogger(__name__)

MAX_SEGMENT_JUMPS = 10**7
UNIFORMIZATION_TAIL = 1e-14
# scaling-and-squaring threshold for the Poisson mean of the uniformized series
_MAX_POISSON_MEAN = 64.0


class GeneratorField:
    """The map x -> Q(x) with polynomial off-diagonal rates.

    The diagonal is never stored: it is the negated off-diagonal row sum, so
    every evaluated row sums to zero exactly up to rounding.  Negative rate
    evaluations are clamped to zero (and counted in ``clamp_events``) when
    ``clamp_negative`` is set, otherwise they raise :class:`ModelSpecError`.
    """

    def __init__(self, offdiag: PolyArray, clamp_negative: bool = True):
        if len(offdiag.shape) != 2 or offdiag.shape[0] != offdiag.shape[1]:
            raise ModelSpecError(f"generator entries must be square, got shape {offdiag.shape}")
        m0 = offdiag.shape[0]
        diag = offdiag.coeffs[:, np.arange(m0), np.arange(m0)]
        if np.any(diag != 0.0):
            raise ModelSpecError("generator diagonal is derived from row sums and may not be given")
        self.offdiag = offdiag
        self.m0 = m0
        self.n = offdiag.n
        self.clamp_negative = bool(clamp_negative)
        self.clamp_events = 0
        self.is_constant = offdiag.is_constant

    @classmethod
    def from_terms(cls, m0, n, entries, clamp_negative=True):
        """``entries`` maps ``(i, j)`` (i != j) to a list of ``(exponents, coeff)``."""
        for (i, j) in entries:
            if i == j:
                raise ModelSpecError(f"generator entry ({i}, {j}) is on the diagonal")
            if not (0 <= i < m0 and 0 <= j < m0):
                raise ModelSpecError(f"generator entry ({i}, {j}) outside state space of size {m0}")
        return cls(PolyArray.from_entry_terms(entries, (m0, m0), n), clamp_negative)

    @classmethod
    def constant(cls, Q, n=1):
        Q = np.asarray(Q, dtype=float)
        off = Q - np.diag(np.diag(Q))
        return cls(PolyArray.constant(off, n))

    def raw_offdiag_batch(self, X):
        return self.offdiag.evaluate_batch(X)

    def evaluate_batch(self, X):
        """Generators at points ``X`` of shape ``(B, n)``; returns ``(B, m0, m0)``."""
        off = self.raw_offdiag_batch(X)
        if np.any(off < 0.0):
            if not self.clamp_negative:
                raise ModelSpecError("negative off-diagonal rate and clamping is disabled")
            self.clamp_events += int(np.count_nonzero(off < 0.0))
            off = np.maximum(off, 0.0)
        Q = np.array(off, dtype=float)
        idx = np.arange(self.m0)
        Q[:, idx, idx] = -off.sum(axis=2)
        return Q

    def evaluate(self, x):
        return self.evaluate_batch(np.asarray(x, dtype=float).reshape(1, self.n))[0]

    def derivative_batch(self, X, direction):
        """Directional derivative of Q at ``X``; clamped entries have zero derivative."""
        d_off = np.array(self.offdiag.directional(direction).evaluate_batch(X), dtype=float)
        if not self.is_constant:
            d_off[self.raw_offdiag_batch(X) < 0.0] = 0.0
        idx = np.arange(self.m0)
        d_off[:, idx, idx] = 0.0
        d_off[:, idx, idx] = -d_off.sum(axis=2)
        return d_off

    def derivative(self, x, direction):
        return self.derivative_batch(np.asarray(x, dtype=float).reshape(1, self.n), direction)[0]

    def total_rate(self, x):
        """K(x), the sum of all off-diagonal rates."""
        Q = self.evaluate(x)
        return float(Q.sum() - np.trace(Q))


def is_irreducible(Q):
    """Single communicating class on the support of the off-diagonal rates."""
    Q = np.asarray(Q)
    m0 = Q.shape[0]
    if m0 < 2:
        return False
    adj = (Q > 0.0) & ~np.eye(m0, dtype=bool)
    ncomp, _ = connected_components(adj, directed=True, connection="strong")
    return ncomp == 1


@dataclass
class ProbeResult:
    x: np.ndarray
    nonnegative: bool
    irreducible: bool
    total_rate: float
    min_offdiag: float


@dataclass
class ValidationReport:
    probes: list = field(default_factory=list)
    degenerate: bool = False
    clamp_negative: bool = True

    @property
    def valid(self):
        if self.degenerate or not all(p.irreducible for p in self.probes):
            return False
        return self.clamp_negative or all(p.nonnegative for p in self.probes)

    def to_dict(self):
        return {
            "valid": self.valid,
            "degenerate": self.degenerate,
            "probes": [{"x": [float(v) for v in p.x], "nonnegative": p.nonnegative,
                        "irreducible": p.irreducible, "total_rate": p.total_rate,
                        "min_offdiag": p.min_offdiag} for p in self.probes],
        }


def validate_generator(gf: GeneratorField, probes) -> ValidationReport:
    """Check conservativity, nonnegativity and irreducibility at each probe."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.size == 0:
        raise ValueError("at least one probe point is required")
    if probes.shape[1] != gf.n:
        probes = probes.reshape(-1, gf.n)
    report = ValidationReport(degenerate=gf.m0 < 2, clamp_negative=gf.clamp_negative)
    try:
        raw = gf.raw_offdiag_batch(probes)
    except (ValueError, FloatingPointError) as exc:
        raise ModelSpecError(f"generator evaluation failed: {exc}") from exc
    mask = ~np.eye(gf.m0, dtype=bool)
    for x, off in zip(probes, raw):
        vals = off[mask]
        nonneg = bool(np.all(vals >= 0.0))
        clamped = np.maximum(off, 0.0) * mask
        if not nonneg:
            gf.clamp_events += int(np.count_nonzero(vals < 0.0))
        Q = clamped - np.diag(clamped.sum(axis=1))
        report.probes.append(ProbeResult(
            x=np.array(x), nonnegative=nonneg, irreducible=is_irreducible(Q),
            total_rate=float(clamped.sum()),
            min_offdiag=float(vals.min()) if vals.size else 0.0))
    return report


def _require_irreducible(Q):
    if not is_irreducible(Q):
        raise IrreducibilityError("generator is not irreducible")


def invariant_measure(Q):
    """Stationary distribution mu with mu Q = 0 and sum(mu) = 1.

    Solves the transposed system with its first equation replaced by the
    normalization row, followed by one step of iterative refinement.
    """
    Q = np.asarray(Q, dtype=float)
    m0 = Q.shape[0]
    if m0 == 1:
        return np.ones(1)
    _require_irreducible(Q)
    A = Q.T.copy()
    A[0, :] = 1.0
    rhs = np.zeros(m0)
    rhs[0] = 1.0
    try:
        lu = linalg.lu_factor(A, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise IrreducibilityError(f"invariant-measure system is singular: {exc}") from exc
    mu = linalg.lu_solve(lu, rhs)
    mu += linalg.lu_solve(lu, rhs - A @ mu)
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0.0):
        raise IrreducibilityError("invariant measure is not strictly positive")
    return mu


def invariant_measure_batch(Q):
    """Vectorized invariant measures for a stack ``(B, m0, m0)``; positivity checked."""
    Q = np.asarray(Q, dtype=float)
    B, m0, _ = Q.shape
    if m0 == 1:
        return np.ones((B, 1))
    A = np.swapaxes(Q, 1, 2).copy()
    A[:, 0, :] = 1.0
    rhs = np.zeros((B, m0, 1))
    rhs[:, 0, 0] = 1.0
    try:
        mu = np.linalg.solve(A, rhs)[..., 0]
    except np.linalg.LinAlgError as exc:
        raise IrreducibilityError(f"invariant-measure system is singular: {exc}") from exc
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0.0):
        raise IrreducibilityError("invariant measure is not strictly positive")
    return mu


def uniformization_rate(Q):
    return float(np.max(np.abs(np.diag(Q)))) if np.size(Q) else 0.0


def transition_matrix(Q, t, tol=UNIFORMIZATION_TAIL):
    """P_t = exp(tQ) by uniformization.

    The series sum_k Pois(k; Lt) (I + Q/L)^k is cut once the Poisson tail
    mass drops below ``tol``.  Large Lt is handled by evaluating at t / 2^s
    and squaring s times.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    Q = np.asarray(Q, dtype=float)
    m0 = Q.shape[0]
    lam = uniformization_rate(Q)
    if t == 0 or lam == 0.0:
        return np.eye(m0)
    mean = lam * t
    squarings = 0
    if mean > _MAX_POISSON_MEAN:
        squarings = int(math.ceil(math.log2(mean / _MAX_POISSON_MEAN)))
        mean /= 2.0**squarings
    step = np.eye(m0) + Q / lam
    weight = math.exp(-mean)
    term = np.eye(m0)
    P = weight * term
    k = 0
    while True:
        k += 1
        term = term @ step
        weight *= mean / k
        P += weight * term
        if k > mean and pdtrc(k, mean) < tol:
            break
    for _ in range(squarings):
        P = P @ P
    return P


@dataclass
class ChainSegment:
    initial_state: int
    duration: float
    jump_times: np.ndarray
    states: np.ndarray
    occupation: np.ndarray

    @property
    def final_state(self):
        return int(self.states[-1]) if len(self.states) else self.initial_state

    def intervals(self):
        """``(state, start, end)`` for each maximal constant piece of the segment."""
        starts = np.concatenate([[0.0], self.jump_times])
        ends = np.concatenate([self.jump_times, [self.duration]])
        states = np.concatenate([[self.initial_state], self.states]).astype(int)
        return list(zip(states.tolist(), starts.tolist(), ends.tolist()))


def sample_chain_segment(Q, i0, duration, rng, max_jumps=MAX_SEGMENT_JUMPS):
    """Exact path of the chain with generator Q on [0, duration] from state i0."""
    if duration < 0:
        raise ValueError(f"duration must be nonnegative, got {duration}")
    Q = np.asarray(Q, dtype=float)
    m0 = Q.shape[0]
    state = int(i0)
    t = 0.0
    times, states = [], []
    occ = np.zeros(m0)
    while True:
        rate = -Q[state, state]
        hold = rng.exponential(1.0 / rate) if rate > 0.0 else math.inf
        if t + hold >= duration:
            occ[state] += duration - t
            break
        occ[state] += hold
        t += hold
        row = np.maximum(Q[state], 0.0)
        row[state] = 0.0
        cum = np.cumsum(row)
        nxt = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        state = min(nxt, m0 - 1)
        times.append(t)
        states.append(state)
        if len(times) > max_jumps:
            raise StiffnessError(f"chain segment exceeded {max_jumps} jumps")
    return ChainSegment(int(i0), float(duration), np.array(times), np.array(states, dtype=int), occ)


def invariant_measure_gradient(gf: GeneratorField, x, direction):
    """Directional derivative of mu^x.

    Differentiating mu Q = 0 gives (d mu) Q = -mu (dQ), closed by sum(d mu) = 0.
    """
    Q = gf.evaluate(x)
    dQ = gf.derivative(x, direction)
    mu = invariant_measure(Q)
    return _measure_gradient(Q, dQ, mu)


def _measure_gradient(Q, dQ, mu):
    A = Q.T.copy()
    A[0, :] = 1.0
    rhs = -(mu @ dQ)
    rhs[0] = 0.0
    return np.linalg.solve(A, rhs)


def measure_gradient_batch(Q, dQ, mu):
    """Batched form of :func:`invariant_measure_gradient` for given Q, dQ, mu stacks."""
    A = np.swapaxes(Q, 1, 2).copy()
    A[:, 0, :] = 1.0
    rhs = -np.einsum("bi,bij->bj", mu, dQ)
    rhs[:, 0] = 0.0
    return np.linalg.solve(A, rhs[..., None])[..., 0]


def _simpson_weights(N):
    w = np.ones(N + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def _semigroup_derivative_simpson(Q, dQ, t, f, N):
    s = t / N
    Ps = transition_matrix(Q, s)
    v = np.empty((N + 1,) + f.shape)
    v[N] = f
    for k in range(N - 1, -1, -1):
        v[k] = Ps @ v[k + 1]
    w = _simpson_weights(N)
    acc = np.zeros_like(f, dtype=float)
    Pk = np.eye(Q.shape[0])
    for k in range(N + 1):
        acc += w[k] * (Pk @ (dQ @ v[k]))
        Pk = Pk @ Ps
    return s * acc


def semigroup_derivative(gf: GeneratorField, x, direction, t, f, tol=1e-8, max_intervals=2**15):
    """Directional derivative of P^x_t f from the Duhamel integral.

    Composite Simpson over [0, t] of P_s (dQ) P_{t-s} f, refined by halving
    the step until consecutive results differ by less than ``tol``.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    f = np.asarray(f, dtype=float)
    Q = gf.evaluate(x)
    dQ = gf.derivative(x, direction)
    if t == 0 or not np.any(dQ):
        return np.zeros_like(f)
    N = 16
    prev = _semigroup_derivative_simpson(Q, dQ, t, f, N)
    while N < max_intervals:
        N *= 2
        cur = _semigroup_derivative_simpson(Q, dQ, t, f, N)
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur
    log.warning("semigroup_derivative did not reach tolerance %g with %d intervals", tol, N)
    return prev
