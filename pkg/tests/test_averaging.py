import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_model
from mssde.averaging import (AveragedModel, CenteredDrift, SwitchModel, averaged_diffusion,
                             averaged_drift, averaged_drift_gradient, clt_theta,
                             monotonicity_constant, psd_sqrt)
from mssde.chain import GeneratorField, invariant_measure
from mssde.errors import NotPSDError
from mssde.modelspec import load_model
from mssde.poisson import StateFunctionField, solve_poisson
from mssde.polynomial import PolyArray


def linear_model(A, c, Q):
    """b(x, i) = A x + c_i, sigma = 0, constant Q."""
    m0, n = len(c), A.shape[0]
    entries = {}
    for i in range(m0):
        for k in range(n):
            terms = [((0,) * n, float(c[i][k]))]
            for l in range(n):
                e = [0] * n
                e[l] = 1
                terms.append((tuple(e), float(A[k, l])))
            entries[(i, k)] = terms
    return SwitchModel(n, n, m0, StateFunctionField(PolyArray.from_entry_terms(entries, (m0, n), n)),
                       PolyArray.zeros((m0, n, n), n), GeneratorField.constant(Q, n))


def test_psd_sqrt_examples():
    np.testing.assert_allclose(psd_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    np.testing.assert_allclose(psd_sqrt(np.array([[-1e-12]])), [[0.0]])
    with pytest.raises(NotPSDError):
        psd_sqrt(np.diag([1.0, -1e-3]))
    with pytest.raises(ValueError):
        psd_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_psd_sqrt_squares_back(n, seed):
    G = np.random.default_rng(seed).normal(size=(n, n + 1))
    M = G @ G.T
    R = psd_sqrt(M)
    np.testing.assert_allclose(R, R.T, atol=1e-12)
    np.testing.assert_allclose(R @ R, M, atol=1e-10 * max(1.0, np.abs(M).max()))


def test_example_2_9_coefficients():
    avg = AveragedModel(load_model("example_2_9"))
    x = np.array([0.7])
    np.testing.assert_allclose(avg.mu(x), [0.5, 0.5])
    assert avg.drift(x)[0] == 0.0
    assert avg.theta(x)[0, 0] == 1.0
    assert avg.diffusion(x)[0, 0] == 1.0
    np.testing.assert_array_equal(avg.drift_gradient(x), 0.0)


def test_example_2_11_sigma_bar():
    assert averaged_diffusion(load_model("example_2_11"), np.zeros(1))[0, 0] == 1.0
    assert averaged_drift(load_model("example_2_11"), np.zeros(1))[0] == 0.0


def test_weighted_drift_example():
    # b = (2, 0), mu = (1/3, 2/3)  ->  2/3
    Q = np.array([[-2.0, 2.0], [1.0, -1.0]])
    m = linear_model(np.zeros((1, 1)), [[2.0], [0.0]], Q)
    assert averaged_drift(m, [0.0])[0] == pytest.approx(2.0 / 3.0, abs=1e-15)


def test_state_independent_drift_and_sigma(rng):
    m = random_model(rng, m0=3, n=2, sigma_shared=True)
    # overwrite drift with a switch-independent one
    entries = {(i, k): [((1, 0), 1.5), ((0, 0), -0.5 * k)] for i in range(3) for k in range(2)}
    m.drift = StateFunctionField(PolyArray.from_entry_terms(entries, (3, 2), 2))
    x = rng.normal(size=2)
    np.testing.assert_allclose(averaged_drift(m, x), m.drift.evaluate(x)[0], atol=1e-14)
    s = m.diffusion.evaluate(x)[0]
    S = averaged_diffusion(m, x)
    np.testing.assert_allclose(S @ S.T, s @ s.T, atol=1e-12)
    np.testing.assert_allclose(clt_theta(m, x), 0.0, atol=1e-12)


def test_defining_identities(rng):
    for _ in range(100):
        m = random_model(rng)
        avg = AveragedModel(m, cache=False)
        x = rng.uniform(-2, 2, m.n)
        Q = m.generator.evaluate(x)
        mu = invariant_measure(Q)
        s = m.diffusion.evaluate(x)
        ss = sum(mu[j] * s[j] @ s[j].T for j in range(m.m0))
        S = avg.diffusion(x)
        assert np.max(np.abs(S @ S.T - ss)) < 1e-10
        F = CenteredDrift(m).evaluate(x)
        phi = solve_poisson(Q, F, mu).phi
        flux = sum(mu[j] * (np.outer(F[j], phi[j]) + np.outer(phi[j], F[j])) for j in range(m.m0))
        T = avg.theta(x)
        assert np.max(np.abs(T @ T.T - flux)) < 1e-10


def test_batch_matches_pointwise(rng):
    m = random_model(rng, m0=3, n=2)
    avg = AveragedModel(m)
    X = rng.uniform(-1, 1, (6, 2))
    for name in ("mu", "drift", "diffusion", "theta", "drift_gradient", "sigma_gradient"):
        batch = getattr(avg, name + "_batch")(X)
        for b in range(len(X)):
            np.testing.assert_allclose(batch[b], getattr(avg, name)(X[b]), atol=1e-12)


def test_theta_cache_returns_copies():
    avg = AveragedModel(load_model("cubic"))
    t = avg.theta([0.3])
    t[0, 0] = 99.0
    assert avg.theta([0.3])[0, 0] != 99.0


def test_linear_drift_gradient(rng):
    A = rng.normal(size=(2, 2))
    m = linear_model(A, [[1.0, 0.0], [0.0, 2.0], [3.0, -1.0]],
                     np.array([[-2.0, 1.0, 1.0], [1.0, -1.0, 0.0], [0.5, 0.5, -1.0]]))
    np.testing.assert_allclose(averaged_drift_gradient(m, rng.normal(size=2)), A, atol=1e-13)


def test_drift_gradient_finite_difference(rng):
    for _ in range(20):
        m = random_model(rng)
        avg = AveragedModel(m, cache=False)
        x = rng.uniform(-1, 1, m.n)
        h = 1e-5
        G = avg.drift_gradient(x)
        for l in range(m.n):
            e = np.zeros(m.n)
            e[l] = h
            fd = (avg.drift(x + e) - avg.drift(x - e)) / (2 * h)
            assert np.max(np.abs(G[:, l] - fd)) < 1e-6


def test_cubic_drift_is_monotone():
    avg = AveragedModel(load_model("cubic"))
    np.testing.assert_allclose(avg.drift_gradient([1.5]), [[-3 * 1.5**2]], atol=1e-12)
    lam = monotonicity_constant(avg, np.random.default_rng(0))
    assert lam < 10.0
    assert lam <= 0.0
