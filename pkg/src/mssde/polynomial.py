"""Array-valued multivariate polynomials with exact differentiation.

A :class:`PolyArray` stores every entry of an output array of shape ``shape``
over a shared monomial basis: ``exponents`` is ``(T, n)`` and ``coeffs`` is
``(T, *shape)``.  Evaluation on a batch of points is one monomial table times
one coefficient matrix.
"""

from __future__ import annotations

import numpy as np

from .errors import ModelSpecError


class PolyArray:
    def __init__(self, exponents, coeffs, shape, n):
        self.n = int(n)
        self.shape = tuple(int(s) for s in shape)
        exponents = np.asarray(exponents, dtype=np.int64).reshape(-1, self.n)
        coeffs = np.asarray(coeffs, dtype=float).reshape((exponents.shape[0],) + self.shape)
        if np.any(exponents < 0):
            raise ModelSpecError("polynomial exponents must be nonnegative")
        if not np.all(np.isfinite(coeffs)):
            raise ModelSpecError("polynomial coefficients must be finite")
        # merge repeated monomials and drop all-zero rows
        if exponents.shape[0]:
            uniq, inv = np.unique(exponents, axis=0, return_inverse=True)
            merged = np.zeros((uniq.shape[0],) + self.shape)
            np.add.at(merged, inv.ravel(), coeffs)
            keep = np.any(merged.reshape(uniq.shape[0], -1) != 0.0, axis=1)
            exponents, coeffs = uniq[keep], merged[keep]
        self.exponents = exponents
        self.coeffs = coeffs
        self._flat = coeffs.reshape(coeffs.shape[0], int(np.prod(self.shape)))
        self.is_constant = bool(np.all(exponents == 0))
        if self.is_constant:
            self._const = self._flat.sum(axis=0).reshape(self.shape)
        self.degree = int(exponents.sum(axis=1).max()) if exponents.shape[0] else 0

    @classmethod
    def zeros(cls, shape, n):
        return cls(np.zeros((0, n), dtype=np.int64), np.zeros((0,) + tuple(shape)), shape, n)

    @classmethod
    def constant(cls, value, n):
        value = np.asarray(value, dtype=float)
        return cls(np.zeros((1, n), dtype=np.int64), value[None], value.shape, n)

    @classmethod
    def from_entry_terms(cls, entries, shape, n):
        """Build from a mapping ``index tuple -> [(exponents, coeff), ...]``."""
        shape = tuple(shape)
        rows, vals = [], []
        for index, terms in entries.items():
            for exps, coeff in terms:
                exps = tuple(int(e) for e in exps)
                if len(exps) != n:
                    raise ModelSpecError(
                        f"term at {index} has {len(exps)} exponents, expected {n}")
                c = np.zeros(shape)
                c[index] = float(coeff)
                rows.append(exps)
                vals.append(c)
        if not rows:
            return cls.zeros(shape, n)
        return cls(np.array(rows), np.array(vals), shape, n)

    def terms(self, index):
        """Nonzero ``(exponents, coeff)`` pairs of one entry."""
        col = self.coeffs[(slice(None),) + tuple(index)]
        return [(tuple(int(e) for e in self.exponents[t]), float(col[t]))
                for t in range(col.shape[0]) if col[t] != 0.0]

    def _monomials(self, X):
        return np.prod(X[:, None, :] ** self.exponents[None, :, :], axis=2)

    def evaluate_batch(self, X):
        """Values at points ``X`` of shape ``(B, n)``; returns ``(B, *shape)``."""
        X = np.asarray(X, dtype=float)
        B = X.shape[0]
        if self.is_constant:
            return np.broadcast_to(self._const, (B,) + self.shape)
        if self.exponents.shape[0] == 0:
            return np.zeros((B,) + self.shape)
        return (self._monomials(X) @ self._flat).reshape((B,) + self.shape)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float).reshape(1, self.n)
        return np.array(self.evaluate_batch(x)[0])

    def partial(self, l):
        e = self.exponents.copy()
        factor = e[:, l].astype(float)
        keep = factor > 0
        e = e[keep]
        e[:, l] -= 1
        c = self.coeffs[keep] * factor[keep].reshape((-1,) + (1,) * len(self.shape))
        return PolyArray(e, c, self.shape, self.n)

    def directional(self, direction):
        """Polynomial of the derivative along ``direction``."""
        direction = np.asarray(direction, dtype=float).reshape(self.n)
        parts = [(direction[l], self.partial(l)) for l in range(self.n) if direction[l] != 0.0]
        if not parts:
            return PolyArray.zeros(self.shape, self.n)
        exps = np.concatenate([p.exponents for _, p in parts])
        coeffs = np.concatenate([w * p.coeffs for w, p in parts])
        return PolyArray(exps, coeffs, self.shape, self.n)

    def jacobian(self):
        """List of partial-derivative polynomials, one per coordinate."""
        return [self.partial(l) for l in range(self.n)]

    def jacobian_batch(self, X):
        """Derivatives at ``X``: ``(B, *shape, n)`` with the last axis the direction."""
        return np.stack([p.evaluate_batch(X) for p in self.jacobian()], axis=-1)

    def __repr__(self):
        return f"PolyArray(shape={self.shape}, n={self.n}, terms={self.exponents.shape[0]})"
