"""Evaluation instruments: linear preference score, coverage and TrueSkill ranking."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import ContractViolation


@dataclass(frozen=True)
class MetricWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ContractViolation("metric weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.size


def preference_score(w: MetricWeights, y) -> float:
    """Linear stand-in for a stakeholder's utility: ``w . y``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != len(w):
        raise ContractViolation(f"observable length {y.size} does not match {len(w)} weights")
    return float(w.weights @ y)


def preference_scores(w: MetricWeights, Y) -> np.ndarray:
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[1] != len(w):
        raise ContractViolation(f"observable length {Y.shape[1]} does not match {len(w)} weights")
    return Y @ w.weights


def coverage_score(X_collected) -> float:
    """Sum over dimensions of the sample standard deviation (n - 1 divisor)."""
    X = np.atleast_2d(np.asarray(X_collected, dtype=float))
    if X.shape[0] < 2:
        raise ContractViolation("coverage needs at least two scenarios")
    return float(np.sum(np.std(X, axis=0, ddof=1)))


@dataclass(frozen=True)
class SkillRating:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ContractViolation(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class TrueSkillParams:
    mu0: float = 25.0
    sigma0: float = 25.0 / 3.0
    beta: float = 25.0 / 6.0
    tau: float = 25.0 / 300.0
    draw_probability: float = 0.10

    def fresh(self) -> SkillRating:
        return SkillRating(self.mu0, self.sigma0)

    def draw_margin(self) -> float:
        return float(norm.ppf((self.draw_probability + 1.0) / 2.0) * math.sqrt(2.0) * self.beta)


def _v_win(t: float, eps: float) -> float:
    x = t - eps
    # phi/Phi in log space keeps the ratio finite deep in the left tail
    return math.exp(norm.logpdf(x) - norm.logcdf(x))


def _w_win(t: float, eps: float) -> float:
    v = _v_win(t, eps)
    return v * (v + t - eps)


def trueskill_update(winner: SkillRating, loser: SkillRating,
                     params: TrueSkillParams | None = None) -> tuple[SkillRating, SkillRating]:
    """Two-player TrueSkill update for a decisive game."""
    p = params or TrueSkillParams()
    var_w = winner.sigma**2 + p.tau**2
    var_l = loser.sigma**2 + p.tau**2
    c2 = 2 * p.beta**2 + var_w + var_l
    c = math.sqrt(c2)
    t = (winner.mu - loser.mu) / c
    eps = p.draw_margin() / c
    v = _v_win(t, eps)
    w = _w_win(t, eps)
    new_w = SkillRating(winner.mu + var_w / c * v, math.sqrt(var_w * (1 - var_w / c2 * w)))
    new_l = SkillRating(loser.mu - var_l / c * v, math.sqrt(var_l * (1 - var_l / c2 * w)))
    return new_w, new_l


def rank_candidates(points, oracle, max_points: int, rng: np.random.Generator,
                    params: TrueSkillParams | None = None) -> tuple[np.ndarray, list[SkillRating]]:
    """Rate observables by a round robin of oracle-decided 1-v-1 games.

    ``oracle`` is any object with ``compare(y1, y2, rng) -> Verdict``. Returns
    the indices kept after downsampling (sorted) and their final ratings in
    the same order.
    """
    if max_points < 2:
        raise ContractViolation("max_points must be >= 2")
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] < 2:
        raise ContractViolation("need at least two points to rank")
    p = params or TrueSkillParams()
    n = P.shape[0]
    keep = np.arange(n) if n <= max_points else np.sort(rng.choice(n, max_points, replace=False))
    ratings = [p.fresh() for _ in keep]
    games = list(itertools.combinations(range(keep.size), 2))
    order = rng.permutation(len(games))
    for g in order:
        i, j = games[g]
        verdict = oracle.compare(P[keep[i]], P[keep[j]], rng)
        win, lose = (i, j) if int(verdict.choice) == 1 else (j, i)
        ratings[win], ratings[lose] = trueskill_update(ratings[win], ratings[lose], p)
    return keep, ratings


def write_ratings_csv(path, indices, ratings) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point_index", "mu", "sigma"])
        for idx, r in zip(indices, ratings):
            writer.writerow([int(idx), repr(r.mu), repr(r.sigma)])
