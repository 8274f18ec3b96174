import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefbed.acquisition import (
    AcquisitionConfig,
    AcquisitionMode,
    _crn_terms,
    _hill_climb,
    child_seed,
    pair_score,
    pair_terms,
    propose_pair,
    propose_pair_single_gp,
    single_score,
    single_terms,
)
from prefbed.errors import ContractViolation
from prefbed.kernels import KernelSpec
from prefbed.objective import ObjectiveDataset, OptConfig, fit_exact, predict
from prefbed.preference import PreferenceDataset, PreferenceModel, fit_laplace, utility_mean
from prefbed.space import ScenarioSpace

SMALL = AcquisitionConfig(pool_size=64, top_k=6, mc_samples=16, refine_steps=5)


def _models(seed=0, d=2):
    r = np.random.default_rng(seed)
    X = r.uniform(size=(12, d))
    Y = np.column_stack([X.sum(1), np.sin(3 * X[:, 0])])
    obj = fit_exact(ObjectiveDataset.with_bounds(X, Y, np.zeros(d), np.ones(d)),
                    KernelSpec.default(d, lengthscale=0.4, noise_variance=0.01), OptConfig(train_hyper=False))
    util = Y @ np.array([1.0, -0.5])
    duels = [(i, j, 1 if util[i] > util[j] else 2) for i, j in zip(range(0, 12, 2), range(1, 12, 2))]
    duels += [(i, (i + 3) % 12, 1 if util[i] > util[(i + 3) % 12] else 2) for i in range(12)]
    pref = fit_laplace(PreferenceDataset(Y, duels))
    return obj, pref


def test_config_validation():
    with pytest.raises(ContractViolation):
        AcquisitionConfig(pool_size=4, top_k=8)
    with pytest.raises(ContractViolation):
        AcquisitionConfig(mc_samples=0)
    assert AcquisitionConfig(mode="MI_only").mode is AcquisitionMode.MI_ONLY
    c = AcquisitionConfig()
    assert (c.pool_size, c.top_k, c.mc_samples, c.refine_steps) == (512, 16, 32, 20)


def test_space_validation():
    with pytest.raises(ContractViolation):
        ScenarioSpace([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ContractViolation):
        ScenarioSpace.unit(3, binary_dims=(3,))


def test_child_seed_stable():
    assert child_seed(1, "acq", 3) == child_seed(1, "acq", 3)
    assert child_seed(1, "acq", 3) != child_seed(1, "acq", 4)
    assert 0 <= child_seed("x") < 2**63


def test_no_duels_utility_zero():
    obj, _ = _models()
    prior = PreferenceModel.prior(2)
    X = np.random.default_rng(1).uniform(size=(20, 2))
    mi, util, _ = single_terms(obj, prior, X, SMALL, np.random.default_rng(0))
    assert np.all(util == 0.0)
    full = AcquisitionConfig(pool_size=64, top_k=6, mc_samples=16)
    mi_only = AcquisitionConfig(pool_size=64, top_k=6, mc_samples=16, mode="MI_only")
    for x in X[:5]:
        assert single_score(obj, prior, x, full, np.random.default_rng(2)) == \
            single_score(obj, prior, x, mi_only, np.random.default_rng(2))


def test_deterministic_objective_gives_plain_utility():
    X = np.array([[0.1], [0.5], [0.9]])
    Y = np.column_stack([X[:, 0], 1 - X[:, 0]])
    obj = fit_exact(ObjectiveDataset.with_bounds(X, Y, [0.0], [1.0]),
                    KernelSpec.default(1, noise_variance=0.0), OptConfig(train_hyper=False))
    _, pref = _models()
    mi, util, Ys = single_terms(obj, pref, X[1:2], SMALL, np.random.default_rng(0))
    assert mi[0] <= 1e-6
    np.testing.assert_allclose(Ys[0], np.repeat(Y[1:2], SMALL.mc_samples, 0), atol=1e-8)
    # the utility term is the posterior mean in units of the probit scale
    assert util[0] == pytest.approx(utility_mean(pref, Y[1:2])[0] / pref.lam, abs=1e-6)


def test_mode_bookkeeping(rng):
    obj, pref = _models()
    for _ in range(100):
        x1, x2 = rng.uniform(size=(2, 2))
        seed = int(rng.integers(1 << 30))
        t = pair_terms(obj, pref, x1, x2, SMALL, np.random.default_rng(seed))
        scores = {m: pair_score(obj, pref, x1, x2, AcquisitionConfig(64, 6, 16, m), np.random.default_rng(seed))
                  for m in ("Full", "MI_only", "Pref_only")}
        assert scores["Full"] == scores["MI_only"] + scores["Pref_only"] or \
            scores["Full"] == pytest.approx(scores["MI_only"] + scores["Pref_only"], abs=1e-12)
        assert scores["Full"] == t.mi_objective + t.mi_preference + t.utility
        assert t.mi_objective >= -1e-9 and t.mi_preference >= -1e-9
        assert t.mi_preference <= math.log(2) + 1e-9
        assert scores["Full"] >= scores["Pref_only"]


def test_single_full_at_least_pref_only(rng):
    obj, pref = _models()
    for x in rng.uniform(size=(50, 2)):
        s = int(rng.integers(1 << 30))
        full = single_score(obj, pref, x, SMALL, np.random.default_rng(s))
        po = single_score(obj, pref, x, AcquisitionConfig(64, 6, 16, "Pref_only"), np.random.default_rng(s))
        assert full >= po


def test_pair_symmetry():
    obj, pref = _models()
    x1, x2 = np.array([0.2, 0.7]), np.array([0.6, 0.1])
    a = pair_score(obj, pref, x1, x2, SMALL, np.random.default_rng(5))
    b = pair_score(obj, pref, x2, x1, SMALL, np.random.default_rng(5))
    assert abs(a - b) <= 1e-6


def test_pair_rejects_identical():
    obj, pref = _models()
    with pytest.raises(ContractViolation):
        pair_score(obj, pref, [0.3, 0.3], [0.3, 0.3], SMALL, np.random.default_rng(0))


def test_pairwise_mi_zero_for_identical_certain_predictions():
    X = np.array([[0.2], [0.8]])
    Y = np.array([[1.0], [1.0]])
    obj = fit_exact(ObjectiveDataset.with_bounds(X, Y, [0.0], [1.0]),
                    KernelSpec.default(1, lengthscale=0.2, noise_variance=0.0), OptConfig(train_hyper=False))
    pref = fit_laplace(PreferenceDataset(np.array([[0.0], [2.0]]), [(0, 1, 2)]))
    t = pair_terms(obj, pref, X[0], X[1], SMALL, np.random.default_rng(0))
    assert t.mi_preference == pytest.approx(0.0, abs=1e-9)


def test_random_mode():
    space = ScenarioSpace([0.0, -2.0], [1.0, 3.0])
    cfg = AcquisitionConfig(mode="Random")
    a = propose_pair(None, None, space, cfg, np.random.default_rng(4))
    b = propose_pair(None, None, space, cfg, np.random.default_rng(4))
    assert all(np.array_equal(p, q) for p, q in zip(a, b))
    assert space.contains(a[0]) and space.contains(a[1]) and not np.array_equal(*a)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["Full", "MI_only", "Pref_only"]))
def test_proposals_respect_bounds(seed, mode):
    r = np.random.default_rng(seed)
    lo = r.uniform(-5, 5, 2)
    hi = lo + r.uniform(0.1, 3, 2)
    space = ScenarioSpace(lo, hi)
    X = space.sample(r, 10)
    Y = np.column_stack([X.sum(1), X[:, 0] * X[:, 1]])
    obj = fit_exact(ObjectiveDataset.with_bounds(X, Y, lo, hi), KernelSpec.default(2), OptConfig(train_hyper=False))
    pref = fit_laplace(PreferenceDataset(Y[:4], [(0, 1, 1), (2, 3, 2)]))
    cfg = AcquisitionConfig(32, 4, 8, mode, refine_steps=10, refine_scale=0.5)
    x1, x2 = propose_pair(obj, pref, space, cfg, r)
    assert space.contains(x1) and space.contains(x2) and not np.array_equal(x1, x2)
    x1, x2 = propose_pair_single_gp(fit_laplace(PreferenceDataset(X[:4], [(0, 1, 1)])), space, cfg, r)
    assert space.contains(x1) and space.contains(x2) and not np.array_equal(x1, x2)


def test_hill_climb_never_decreases(rng):
    obj, pref = _models()
    space = ScenarioSpace.unit(2)
    eps = rng.standard_normal((2, 16, 2))
    eps_b = rng.standard_normal((16, 64))
    score = lambda a, b: _crn_terms(obj, pref, np.stack([a, b]), eps, eps_b).score("Full")
    for _ in range(10):
        x1, x2 = rng.uniform(size=(2, 2))
        start = score(x1, x2)
        y1, y2, best = _hill_climb(score, x1, x2, space, 30, 0.2, rng)
        assert best >= start and best == score(y1, y2)


def _planted(seed, x_star=0.3):
    # objective: y = x on [0, 1], learned almost exactly; utility: sharp peak at y = x_star
    X = np.linspace(0, 1, 25)[:, None]
    obj = fit_exact(ObjectiveDataset.with_bounds(X, X, [0.0], [1.0]),
                    KernelSpec.default(1, lengthscale=0.3, noise_variance=1e-4), OptConfig(train_hyper=False))
    items = np.linspace(0, 1, 21)[:, None]
    u = -np.abs(items[:, 0] - x_star)
    r = np.random.default_rng(seed)
    duels = []
    for _ in range(150):
        i, j = r.choice(21, 2, replace=False)
        duels.append((int(i), int(j), 1 if u[i] > u[j] else 2))
    pref = fit_laplace(PreferenceDataset(items, duels))
    return obj, pref


def test_planted_optimum():
    hits = 0
    for seed in range(5):
        obj, pref = _planted(seed)
        x1, x2 = propose_pair(obj, pref, ScenarioSpace.unit(1), AcquisitionConfig(128, 8, 16),
                              np.random.default_rng(seed))
        hits += min(abs(x1[0] - 0.3), abs(x2[0] - 0.3)) <= 0.1
    assert hits >= 4
