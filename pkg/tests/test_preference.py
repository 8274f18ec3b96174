import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from prefbed.errors import ContractViolation
from prefbed.kernels import KernelSpec
from prefbed.preference import (
    PreferenceDataset,
    PreferenceModel,
    binary_entropy,
    fit_laplace,
    info_gain_preference,
    model_from_dict,
    model_to_dict,
    predict_preference,
    predict_utility,
    probit_likelihood,
)

from oracles import grid_preference, random_pool

PINNED = dict(lambda_grid=None, lengthscale_grid=None, standardize=False)


def fit_pinned(items, duels, ls=1.0, lam=1.0):
    return fit_laplace(PreferenceDataset(items, duels), KernelSpec.default(1, lengthscale=ls), lam, **PINNED)


def test_probit_values():
    assert probit_likelihood(0.3, 0.3, 0.5) == 0.5
    lam = 0.7
    assert probit_likelihood(math.sqrt(2) * lam, 0.0, lam) == pytest.approx(0.84134, abs=1e-5)
    assert probit_likelihood(math.sqrt(2) * lam, 0.0, lam) == pytest.approx(norm.cdf(1.0), abs=1e-14)
    with pytest.raises(ContractViolation):
        probit_likelihood(0, 1, 0.0)


def test_probit_complement(rng):
    a, b = rng.normal(0, 3, 1000), rng.normal(0, 3, 1000)
    lam = rng.uniform(0.01, 3, 1000)
    s = probit_likelihood(a, b, lam) + probit_likelihood(b, a, lam)
    assert np.max(np.abs(s - 1)) < 1e-12
    p = probit_likelihood(a, b, lam)
    assert np.all((p >= 0) & (p <= 1))


def test_binary_entropy():
    assert binary_entropy(0.5) == pytest.approx(math.log(2))
    assert binary_entropy(0.0) == 0.0 and binary_entropy(1.0) == 0.0


def test_dataset_validation():
    with pytest.raises(ContractViolation):
        PreferenceDataset(np.zeros((2, 1)), [(0, 0, 1)])
    with pytest.raises(ContractViolation):
        PreferenceDataset(np.zeros((2, 1)), [(0, 2, 1)])
    with pytest.raises(ContractViolation):
        PreferenceDataset(np.zeros((2, 1)), [(0, 1, 3)])


def test_from_pairs_deduplicates():
    a, b, c = [1.0, 2.0], [0.0, 1.0], [1.0, 2.0 + 1e-12]
    d = PreferenceDataset.from_pairs([(a, b), (b, a), (a, c), (a, a)], [1, 2, 1, 1])
    assert d.items.shape == (3, 2)  # near-duplicate kept
    assert d.duels == [(0, 1, 1), (1, 0, 2), (0, 2, 1)]


def test_empty_duels_rejected():
    with pytest.raises(ContractViolation):
        fit_laplace(PreferenceDataset(np.zeros((2, 1)), []))


def test_single_duel_orders_utilities():
    items = np.array([[0.0], [1.0]])
    m = fit_pinned(items, [(0, 1, 1)])
    assert m.laplace_mode[0] > m.laplace_mode[1]
    ref = grid_preference(items, [(0, 1, 1)], 1.0, 1.0)
    assert ref[(0, 1)] > 0.5
    assert predict_preference(m, items[0], items[1]) > 0.5


def test_contradictory_duels_are_symmetric():
    items = np.array([[0.0], [1.5]])
    m = fit_pinned(items, [(0, 1, 1), (0, 1, 2)])
    assert abs(m.laplace_mode[0] - m.laplace_mode[1]) < 1e-4


def test_total_order_argmax():
    items = np.array([[0.0], [1.0], [2.0]])
    duels = [(2, 1, 1)] * 10 + [(2, 0, 1)] * 10 + [(1, 0, 1)] * 10
    m = fit_laplace(PreferenceDataset(items, duels))
    means = [predict_utility(m, y)[0] for y in items]
    assert int(np.argmax(means)) == 2
    assert means[2] > means[1] > means[0]


def test_far_point_prior_reversion():
    m = fit_pinned(np.array([[0.0], [1.0]]), [(0, 1, 1)], ls=0.5)
    mean, var = predict_utility(m, [40.0])
    assert abs(mean) < 1e-8
    assert var == pytest.approx(m.kernel.signal_variance, rel=0.05)


def test_prior_model_is_uninformative():
    m = PreferenceModel.prior(2)
    assert predict_preference(m, [0.1, 0.2], [3.0, -1.0]) == 0.5
    assert predict_utility(m, [1.0, 1.0]) == (0.0, 1.0)


def test_newton_objective_non_decreasing(rng):
    for _ in range(20):
        items, duels = random_pool(rng)
        m = fit_pinned(items, duels, lam=float(rng.uniform(0.05, 2)))
        assert np.all(np.diff(m.objective_trace) >= -1e-12)
        assert m.converged
        assert np.all(np.isfinite(m.laplace_mode))
        np.testing.assert_allclose(m.laplace_cov, m.laplace_cov.T, atol=1e-12)
        assert np.linalg.eigvalsh(m.laplace_cov).min() > -1e-9


def test_duplicate_duels_move_monotonically():
    items = np.array([[0.0], [1.0], [2.0]])
    base = [(0, 1, 1), (1, 2, 2)]
    prev = None
    for k in range(8):
        m = fit_pinned(items, base + [(0, 2, 1)] * (k + 1))
        p = predict_preference(m, items[0], items[2])
        if prev is not None:
            assert p > prev or p > 1 - 1e-6
        prev = p


def test_label_flip_symmetry(rng):
    for _ in range(10):
        items, duels = random_pool(rng)
        m = fit_pinned(items, duels)
        relabelled = [(a, b, 3 - v) for a, b, v in duels]
        both = [(b, a, 3 - v) for a, b, v in duels]
        np.testing.assert_allclose(fit_pinned(items, relabelled).laplace_mode, -m.laplace_mode, atol=1e-6)
        np.testing.assert_allclose(fit_pinned(items, both).laplace_mode, m.laplace_mode, atol=1e-6)
        # relabelling plus reversing the item order is a pure permutation
        perm = np.arange(len(items))[::-1]
        inv = np.argsort(perm)
        permuted = [(int(inv[a]), int(inv[b]), v) for a, b, v in duels]
        np.testing.assert_allclose(fit_pinned(items[perm], permuted).laplace_mode,
                                   m.laplace_mode[perm], atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 5), st.floats(-3, 5))
def test_preference_complement(seed, a, b):
    r = np.random.default_rng(seed)
    items, duels = random_pool(r)
    m = fit_pinned(items, duels)
    assert abs(predict_preference(m, [a], [b]) + predict_preference(m, [b], [a]) - 1) < 1e-10
    assert predict_preference(m, [a], [a]) == 0.5


def test_matches_grid_oracle_moderate_lambda(rng):
    worst = 0.0
    for _ in range(15):
        items, duels = random_pool(rng, max_items=3)
        ls, lam = float(rng.choice([0.5, 1.0, 2.0])), float(rng.uniform(0.7, 1.5))
        m = fit_pinned(items, duels, ls, lam)
        for (i, j), p in grid_preference(items, duels, ls, lam).items():
            worst = max(worst, abs(p - predict_preference(m, items[i], items[j])))
    assert worst < 0.05


def test_hyperparameter_selection_uses_grids():
    items = np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]])
    m = fit_laplace(PreferenceDataset(items, [(0, 1, 1), (2, 1, 1)]))
    assert m.lam in (0.01, 0.0316, 0.1, 0.316, 1.0)
    assert m.kernel.lengthscales[0] in (0.3, 1.0, 3.0)


def test_dimension_mismatch():
    m = fit_pinned(np.array([[0.0], [1.0]]), [(0, 1, 1)])
    with pytest.raises(ContractViolation):
        predict_utility(m, [1.0, 2.0])


def test_bald_edges(rng):
    m = fit_pinned(np.array([[0.0], [1.0], [2.0]]), [(0, 1, 1), (1, 2, 1)])
    assert info_gain_preference(m, [0.5], [0.5], 64, rng) == pytest.approx(0.0, abs=1e-6)
    vals = [info_gain_preference(m, [a], [b], 64, rng) for a, b in rng.uniform(-2, 4, (100, 2))]
    assert min(vals) >= -1e-6 and max(vals) <= math.log(2)
    with pytest.raises(ContractViolation):
        info_gain_preference(m, [0.0], [1.0], 1, rng)


def test_bald_degenerate_posterior(rng):
    # point-mass posterior at the items: predictive variance is exactly zero there
    items = np.array([[0.0], [1.0]])
    kernel = KernelSpec.default(1)
    K = np.exp(-0.5 * (items - items.T) ** 2)
    Kinv = np.linalg.inv(K)
    u = np.array([0.3, -0.2])
    m = PreferenceModel(kernel, 0.4, items, PreferenceModel.prior(1).scaler, u, np.zeros((2, 2)),
                        Kinv @ u, Kinv)
    assert predict_utility(m, items[0])[1] < 1e-12
    assert info_gain_preference(m, items[0], items[1], 1024, rng) == pytest.approx(0.0, abs=1e-3)


def test_bald_matches_quadrature(rng):
    m = fit_pinned(np.array([[0.0], [1.0], [2.0]]), [(0, 1, 1), (2, 1, 2)], lam=0.5)
    from prefbed.preference import pair_moments
    mu, var = pair_moments(m, np.array([[0.3]]), np.array([[1.7]]))
    x, w = np.polynomial.hermite_e.hermegauss(80)
    d = mu[0] + math.sqrt(var[0]) * x
    p = norm.cdf(d / (math.sqrt(2) * m.lam))
    w = w / w.sum()
    expect = binary_entropy(w @ p) - w @ binary_entropy(p)
    got = info_gain_preference(m, [0.3], [1.7], 200_000, np.random.default_rng(1))
    assert got == pytest.approx(expect, abs=5e-3)


def test_serialisation_roundtrip():
    m = fit_laplace(PreferenceDataset(np.array([[0.0, 1.0], [1.0, 2.0], [3.0, 0.0]]), [(0, 1, 1), (2, 1, 2)]))
    back = model_from_dict(model_to_dict(m))
    assert predict_preference(back, [0.5, 0.5], [2.0, 1.0]) == predict_preference(m, [0.5, 0.5], [2.0, 1.0])
