"""Joint information/utility acquisition over candidate scenario pairs.

For a candidate ``x`` the single-candidate part of the criterion is the
objective-layer information gain plus the expected posterior utility of the
observables predicted at ``x``. For a pair, the information a duel between
the two predicted outcomes would reveal about the utility is added on top.
Monte Carlo draws use matched sample indices for the two candidates.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from . import objective as objm
from . import preference as prefm
from .errors import ContractViolation
from .space import ScenarioSpace

__all__ = [
    "AcquisitionConfig", "AcquisitionMode", "ScenarioSpace", "PairTerms",
    "single_terms", "single_score", "pair_terms", "pair_score", "propose_pair",
    "propose_pair_single_gp", "child_seed",
]


class AcquisitionMode(str, enum.Enum):
    FULL = "Full"
    MI_ONLY = "MI_only"
    PREF_ONLY = "Pref_only"
    RANDOM = "Random"


@dataclass(frozen=True)
class AcquisitionConfig:
    pool_size: int = 512
    top_k: int = 16
    mc_samples: int = 32
    mode: AcquisitionMode = AcquisitionMode.FULL
    refine_steps: int = 20
    bald_samples: int = 64
    refine_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "mode", AcquisitionMode(self.mode))
        if self.mc_samples < 1:
            raise ContractViolation("mc_samples must be >= 1")
        if not 2 <= self.top_k <= self.pool_size:
            raise ContractViolation("need 2 <= top_k <= pool_size")
        if self.bald_samples < 2:
            raise ContractViolation("bald_samples must be >= 2")


def child_seed(*parts) -> int:
    """Stable 63-bit seed derived from integers/strings (independent of PYTHONHASHSEED)."""
    import hashlib

    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") >> 1


@dataclass(frozen=True)
class PairTerms:
    """Additive pieces of a pair's acquisition value."""

    mi_objective: float  # objective-layer information gain, summed over both candidates
    mi_preference: float  # expected duel information about the utility
    utility: float  # expected utility, summed over both candidates

    def score(self, mode: AcquisitionMode) -> float:
        mode = AcquisitionMode(mode)
        if mode is AcquisitionMode.MI_ONLY:
            return self.mi_objective + self.mi_preference
        if mode is AcquisitionMode.PREF_ONLY:
            return self.utility
        return self.mi_objective + self.mi_preference + self.utility


# --------------------------------------------------------------------------
# single candidates


def _sample_batch(obj, X, eps):
    """Observable draws for each row of X given standard-normal ``eps`` (n, S, d_y)."""
    mean, var = objm.predict_batch(obj, X)
    return mean[:, None, :] + np.sqrt(var)[:, None, :] * eps


def _utility_of_samples(pref, Ys):
    n, S, d = Ys.shape
    u = prefm.utility_mean(pref, Ys.reshape(n * S, d)) / pref.lam
    return u.reshape(n, S).mean(axis=1)


def single_terms(obj, pref, X, cfg: AcquisitionConfig, rng: np.random.Generator):
    """Per-row (information gain, expected utility, observable samples) for candidates ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eps = rng.standard_normal((X.shape[0], cfg.mc_samples, obj.output_dim))
    Ys = _sample_batch(obj, X, eps)
    mi = objm.info_gain_objective_batch(obj, X)
    util = _utility_of_samples(pref, Ys)
    return mi, util, Ys


def _mode_single(mi, util, mode):
    if mode is AcquisitionMode.MI_ONLY:
        return mi
    if mode is AcquisitionMode.PREF_ONLY:
        return util
    return mi + util


def single_score(obj, pref, x, cfg: AcquisitionConfig, rng: np.random.Generator) -> float:
    mi, util, _ = single_terms(obj, pref, np.asarray(x, dtype=float)[None, :], cfg, rng)
    return float(_mode_single(mi, util, cfg.mode)[0])


# --------------------------------------------------------------------------
# pairs


def _pair_terms_from_samples(pref, mi1, mi2, Y1, Y2, util1, util2, eps_bald) -> PairTerms:
    """Terms for one pair from matched observable samples ``Y1``/``Y2`` (S x d_y)."""
    mean, var = prefm.pair_moments(pref, Y1, Y2)
    d = mean[:, None] + np.sqrt(var)[:, None] * eps_bald
    p = prefm.ndtr(d / (np.sqrt(2.0) * pref.lam))
    bald = prefm.binary_entropy(p.mean(axis=1)) - prefm.binary_entropy(p).mean(axis=1)
    bald = np.clip(bald, 0.0, np.log(2.0))
    return PairTerms(float(mi1 + mi2), float(bald.mean()), float(util1 + util2))


def _canonical(x1, x2):
    for a, b in zip(x1, x2):
        if a != b:
            return (x1, x2) if a < b else (x2, x1)
    return x1, x2


def pair_terms(obj, pref, x1, x2, cfg: AcquisitionConfig, rng: np.random.Generator) -> PairTerms:
    """Additive acquisition terms of a pair; invariant to the order of ``x1`` and ``x2``."""
    x1 = np.asarray(x1, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    if np.array_equal(x1, x2):
        raise ContractViolation("pair members must differ")
    a, b = _canonical(x1, x2)
    X = np.stack([a, b])
    eps = rng.standard_normal((2, cfg.mc_samples, obj.output_dim))
    eps_bald = rng.standard_normal((cfg.mc_samples, cfg.bald_samples))
    return _crn_terms(obj, pref, X, eps, eps_bald)


def _crn_terms(obj, pref, X, eps, eps_bald) -> PairTerms:
    Ys = _sample_batch(obj, X, eps)
    mi = objm.info_gain_objective_batch(obj, X)
    util = _utility_of_samples(pref, Ys)
    return _pair_terms_from_samples(pref, mi[0], mi[1], Ys[0], Ys[1], util[0], util[1], eps_bald)


def pair_score(obj, pref, x1, x2, cfg: AcquisitionConfig, rng: np.random.Generator) -> float:
    return pair_terms(obj, pref, x1, x2, cfg, rng).score(cfg.mode)


def _random_pair(space: ScenarioSpace, rng):
    while True:
        X = space.sample(rng, 2)
        if not np.array_equal(X[0], X[1]):
            return X[0], X[1]


def _hill_climb(score_fn, x1, x2, space: ScenarioSpace, steps: int, scale: float, rng):
    """Coordinate-perturbation ascent on ``score_fn(x1, x2)``; accepts strict improvements only."""
    best = score_fn(x1, x2)
    span = space.upper - space.lower
    for _ in range(steps):
        which = rng.integers(2)
        dim = rng.integers(space.dim)
        step = rng.normal(0.0, scale * span[dim])
        cand = (x1 if which == 0 else x2).copy()
        cand[dim] = np.clip(cand[dim] + step, space.lower[dim], space.upper[dim])
        c1, c2 = (cand, x2) if which == 0 else (x1, cand)
        if np.array_equal(c1, c2):
            continue
        val = score_fn(c1, c2)
        if val > best:
            x1, x2, best = c1, c2, val
    return x1, x2, best


def propose_pair(obj, pref, space: ScenarioSpace, cfg: AcquisitionConfig,
                 rng: np.random.Generator):
    """Pick the next pair: ranked pool, exhaustive top-k pairing, then local refinement."""
    if cfg.mode is AcquisitionMode.RANDOM:
        return _random_pair(space, rng)
    pool = space.sample(rng, cfg.pool_size)
    mi, util, Ys = single_terms(obj, pref, pool, cfg, rng)
    single = _mode_single(mi, util, cfg.mode)
    top = np.argsort(-single, kind="stable")[: cfg.top_k]
    pairs = list(itertools.combinations(top, 2))
    eps_bald = rng.standard_normal((cfg.mc_samples, cfg.bald_samples))
    best, best_val = None, -np.inf
    for i, j in pairs:
        terms = _pair_terms_from_samples(pref, mi[i], mi[j], Ys[i], Ys[j], util[i], util[j],
                                         eps_bald)
        val = terms.score(cfg.mode)
        if val > best_val:
            best, best_val = (i, j), val
    x1, x2 = pool[best[0]].copy(), pool[best[1]].copy()
    if cfg.refine_steps > 0:
        eps = rng.standard_normal((2, cfg.mc_samples, obj.output_dim))

        def score_fn(a, b):
            return _crn_terms(obj, pref, np.stack([a, b]), eps, eps_bald).score(cfg.mode)

        x1, x2, _ = _hill_climb(score_fn, x1, x2, space, cfg.refine_steps, cfg.refine_scale, rng)
    return x1, x2


# --------------------------------------------------------------------------
# scenario-space preference GP (single-layer baseline)


def _single_gp_terms(pref, X1, X2, util1, util2, eps_bald) -> float:
    mean, var = prefm.pair_moments(pref, X1, X2)
    d = mean[:, None] + np.sqrt(var)[:, None] * eps_bald
    p = prefm.ndtr(d / (np.sqrt(2.0) * pref.lam))
    bald = prefm.binary_entropy(p.mean(axis=1)) - prefm.binary_entropy(p).mean(axis=1)
    return util1 + util2 + np.clip(bald, 0.0, np.log(2.0))


def propose_pair_single_gp(pref, space: ScenarioSpace, cfg: AcquisitionConfig,
                           rng: np.random.Generator):
    """Pool search on predicted utility plus duel information, directly in scenario space."""
    if cfg.mode is AcquisitionMode.RANDOM:
        return _random_pair(space, rng)
    pool = space.sample(rng, cfg.pool_size)
    util = prefm.utility_mean(pref, pool) / pref.lam
    top = np.argsort(-util, kind="stable")[: cfg.top_k]
    I, J = np.array(list(itertools.combinations(top, 2))).T
    eps_bald = rng.standard_normal((1, cfg.bald_samples))
    vals = _single_gp_terms(pref, pool[I], pool[J], util[I], util[J], eps_bald)
    k = int(np.argmax(vals))
    x1, x2 = pool[I[k]].copy(), pool[J[k]].copy()
    if cfg.refine_steps > 0:
        def score_fn(a, b):
            u = prefm.utility_mean(pref, np.stack([a, b])) / pref.lam
            return float(_single_gp_terms(pref, a[None], b[None], u[0], u[1], eps_bald)[0])

        x1, x2, _ = _hill_climb(score_fn, x1, x2, space, cfg.refine_steps, cfg.refine_scale, rng)
    return x1, x2
