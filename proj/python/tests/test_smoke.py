import itertools

import numpy as np
import pytest

import otmatch


def brute_force(S):
    n = S.shape[0]
    return max(sum(S[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def test_assignment_matches_brute_force():
    rng = np.random.default_rng(1)
    for n in range(2, 7):
        S = rng.uniform(-3, 3, size=(n, n))
        c = otmatch.solve_assignment(S)
        assert sorted(c["job_of_worker"]) == list(range(n))
        assert c["total_surplus"] == pytest.approx(brute_force(S), abs=1e-10)
        w, v = np.asarray(c["worker_dual"]), np.asarray(c["firm_dual"])
        assert (S - w[:, None] - v[None, :]).max() <= 1e-9


def test_simulate_is_deterministic():
    a = otmatch.simulate(n=100, seed=4)
    b = otmatch.simulate(n=100, seed=4)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    w, X, Y = a
    assert w.shape == (100,) and X.shape == (100, 2) and Y.shape == (100, 2)


def test_noiseless_fit_is_exact():
    w, X, Y = otmatch.simulate(n=150, seed=3, noiseless=True)
    r = otmatch.fit("SLS", w, X, Y)
    assert r["objective"] <= 1e-12
    assert r["alpha_CC"] == pytest.approx(0.5, abs=1e-6)
    assert r["alpha_MM"] == pytest.approx(0.2, abs=1e-6)


def test_noisy_fit_reports_standard_errors():
    w, X, Y = otmatch.simulate(preset="table3", n=600, seed=9)
    r = otmatch.fit("SGLS", w, X, Y, sigma_degree=0)
    assert r["converged"]
    assert r["se"] is not None and np.all(np.asarray(r["se"]) > 0)
    ml = otmatch.fit("ML", w, X, Y)
    assert set(ml) >= {"alpha_CC", "alpha_MM", "beta_C", "beta_M"}


def test_basis_partition_of_unity():
    X = np.random.default_rng(2).uniform(0, 1, size=(40, 2))
    B = otmatch.basis_matrix(X, 3, 2, box=[0, 1, 0, 1])
    assert B.shape == (40, 12)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)


def test_mardia_and_errors():
    Z = np.random.default_rng(5).standard_normal((400, 2))
    m = otmatch.mardia(Z)
    assert m["skew_df"] == 4 and 0 <= m["skew_p"] <= 1
    with pytest.raises(otmatch.NumericalError):
        otmatch.mardia(np.column_stack([Z[:, 0], 2 * Z[:, 0]]))
    with pytest.raises(ValueError):
        otmatch.simulate(preset="no-such-preset")


def test_monte_carlo_table():
    r = otmatch.monte_carlo("table3", reps=2, n=200, seed=1)
    assert r["estimators"] == ["ML", "ML*", "SML", "SLS", "SGLS"]
    assert np.asarray(r["bias"]).shape == (5, 4)
    assert r["csv"].startswith("parameter,statistic,ML,ML*,SML,SLS,SGLS\n")
