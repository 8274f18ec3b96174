"""Latent-utility GP over observables learned from pairwise duels.

The comparison likelihood is probit in the utility difference, scaled by
``lam``; the posterior over utilities at the comparison pool is approximated
by a Gaussian centred at its mode (Newton's method) with covariance
``(K^-1 + W)^-1``. Hyperparameters are chosen on a small log-grid by the
Laplace-approximate evidence.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr, ndtr

from .errors import ContractViolation, FittingError
from .kernels import KernelSpec, cross_cov, factorize, paired_cov

log = logging.getLogger(__name__)

LAMBDA_GRID = (0.01, 0.0316, 0.1, 0.316, 1.0)
LENGTHSCALE_GRID = (0.3, 1.0, 3.0)
NEWTON_TOL = 1e-6
NEWTON_MAXITER = 100
MAX_HALVINGS = 20
_SQRT2 = math.sqrt(2.0)
_LN2 = math.log(2.0)


def probit_likelihood(u1, u2, lam):
    """Probability that the first item wins: Phi((u1 - u2) / (sqrt(2) lam))."""
    if np.any(np.asarray(lam) <= 0):
        raise ContractViolation("lambda must be positive")
    return ndtr((np.asarray(u1, dtype=float) - np.asarray(u2, dtype=float)) / (_SQRT2 * lam))


def binary_entropy(p):
    """Entropy of a Bernoulli(p) variable in nats (0 at p in {0, 1})."""
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log(p) + (1 - p) * np.log1p(-p))
    return np.nan_to_num(h, nan=0.0)


@dataclass
class PreferenceDataset:
    """A comparison pool and duels ``(index_a, index_b, verdict)``; verdict 1 means ``a`` won."""

    items: np.ndarray
    duels: list

    def __post_init__(self):
        items = np.asarray(self.items, dtype=float)
        self.items = items[:, None] if items.ndim == 1 else items
        n = self.items.shape[0]
        clean = []
        for a, b, v in self.duels:
            a, b, v = int(a), int(b), int(v)
            if not (0 <= a < n and 0 <= b < n):
                raise ContractViolation(f"duel indices ({a}, {b}) out of range for {n} items")
            if a == b:
                raise ContractViolation(f"self-duel on item {a}")
            if v not in (1, 2):
                raise ContractViolation(f"verdict must be 1 or 2, got {v}")
            clean.append((a, b, v))
        self.duels = clean

    @classmethod
    def from_pairs(cls, pairs, verdicts) -> "PreferenceDataset":
        """Build a pool from ``(y1, y2)`` pairs, deduplicating exactly equal vectors."""
        items, index, duels = [], {}, []

        def idx(y):
            y = np.asarray(y, dtype=float).reshape(-1)
            key = y.tobytes()
            if key not in index:
                index[key] = len(items)
                items.append(y)
            return index[key]

        for (y1, y2), v in zip(pairs, verdicts):
            a, b = idx(y1), idx(y2)
            if a == b:
                continue  # identical outcomes carry no ordinal information
            duels.append((a, b, int(v)))
        dim = len(items[0]) if items else 0
        return cls(np.array(items).reshape(len(items), dim), duels)

    @property
    def winners_losers(self) -> tuple[np.ndarray, np.ndarray]:
        w = np.array([a if v == 1 else b for a, b, v in self.duels], dtype=int)
        l = np.array([b if v == 1 else a for a, b, v in self.duels], dtype=int)
        return w, l


@dataclass(frozen=True)
class InputScaler:
    """Per-dimension standardisation applied to observables before the kernel."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, items: np.ndarray) -> "InputScaler":
        shift = items.mean(axis=0)
        scale = items.std(axis=0)
        return cls(shift, np.where(scale > 1e-12, scale, 1.0))

    @classmethod
    def identity(cls, dim: int) -> "InputScaler":
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, Y):
        return (np.asarray(Y, dtype=float) - self.shift) / self.scale


@dataclass
class PreferenceModel:
    kernel: KernelSpec
    lam: float
    items: np.ndarray  # scaled item locations
    scaler: InputScaler
    laplace_mode: np.ndarray
    laplace_cov: np.ndarray
    alpha: np.ndarray  # K^-1 u_hat
    pred_matrix: np.ndarray  # W (I + K W)^-1, so var = k** - k*^T M k*
    converged: bool = True
    newton_residual: float = 0.0
    log_evidence: float = 0.0
    objective_trace: list = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.scaler.shift.size

    @property
    def n_items(self) -> int:
        return self.items.shape[0]

    @classmethod
    def prior(cls, dim: int, kernel: KernelSpec | None = None, lam: float = 1.0,
              scaler: InputScaler | None = None) -> "PreferenceModel":
        """Model with no data: zero-mean prior utilities everywhere."""
        kernel = kernel or KernelSpec.default(dim)
        return cls(kernel, lam, np.zeros((0, dim)), scaler or InputScaler.identity(dim),
                   np.zeros(0), np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0)))


def _duel_derivs(u, win, lose, lam):
    """Log-likelihood, gradient and negative Hessian (W) of the probit duels."""
    n = u.size
    c = _SQRT2 * lam
    z = (u[win] - u[lose]) / c
    ll = float(np.sum(log_ndtr(z)))
    # ratio = phi(z) / Phi(z), evaluated in log space for very negative z
    ratio = np.exp(-0.5 * z * z - 0.5 * math.log(2 * math.pi) - log_ndtr(z))
    g = np.zeros(n)
    np.add.at(g, win, ratio / c)
    np.add.at(g, lose, -ratio / c)
    curv = ratio * (z + ratio) / (c * c)
    W = np.zeros((n, n))
    np.add.at(W, (win, win), curv)
    np.add.at(W, (lose, lose), curv)
    np.add.at(W, (win, lose), -curv)
    np.add.at(W, (lose, win), -curv)
    return ll, g, W


def _newton(K: np.ndarray, win, lose, lam: float, u0: np.ndarray | None = None):
    """Maximise log p(duels|u) - u^T K^-1 u / 2 over u; returns (u, alpha, W, trace, converged, resid)."""
    n = K.shape[0]
    eye = np.eye(n)
    if u0 is None:
        u0 = np.zeros(n)
        alpha = np.zeros(n)
    else:
        alpha = linalg.lstsq(K, u0)[0]
        u0 = K @ alpha
    u = u0

    def psi(u, alpha):
        return _duel_derivs(u, win, lose, lam)[0] - 0.5 * float(alpha @ u)

    obj = psi(u, alpha)
    trace = [obj]
    converged, resid = False, np.inf
    for _ in range(NEWTON_MAXITER):
        ll, g, W = _duel_derivs(u, win, lose, lam)
        resid = float(np.max(np.abs(g - alpha))) if n else 0.0
        if resid < NEWTON_TOL:
            converged = True
            break
        b = W @ u + g
        u_full = np.linalg.solve(eye + K @ W, K @ b)
        alpha_full = b - W @ u_full
        step = 1.0
        for _h in range(MAX_HALVINGS + 1):
            u_try = u + step * (u_full - u)
            alpha_try = alpha + step * (alpha_full - alpha)
            obj_try = psi(u_try, alpha_try)
            if np.isfinite(obj_try) and obj_try >= obj - 1e-12:
                break
            step *= 0.5
        else:
            raise FittingError("Newton iteration diverged after maximum step halvings")
        if obj_try < obj:
            # no ascent possible at machine precision: treat as converged
            converged = resid < 1e-4
            break
        u, alpha, obj = u_try, alpha_try, obj_try
        trace.append(obj)
    _, g, W = _duel_derivs(u, win, lose, lam)
    return u, alpha, W, trace, converged, resid


def _laplace(items_scaled, win, lose, kernel, lam, u0=None):
    n = items_scaled.shape[0]
    K = cross_cov(kernel, items_scaled, items_scaled)
    np.fill_diagonal(K, kernel.signal_variance)
    fac = factorize(K)
    Kj = fac.matrix + fac.jitter_used * np.eye(n)
    u, alpha, W, trace, conv, resid = _newton(Kj, win, lose, lam, u0)
    B = np.eye(n) + Kj @ W
    sign, logdet = np.linalg.slogdet(B)
    ll = _duel_derivs(u, win, lose, lam)[0]
    evidence = ll - 0.5 * float(alpha @ u) - 0.5 * logdet
    M = W @ np.linalg.solve(B, np.eye(n))
    M = 0.5 * (M + M.T)
    cov = Kj - Kj @ M @ Kj
    cov = 0.5 * (cov + cov.T)
    return PreferenceModel(kernel=kernel, lam=lam, items=items_scaled, scaler=None,
                           laplace_mode=u, laplace_cov=cov, alpha=alpha, pred_matrix=M,
                           converged=conv, newton_residual=resid,
                           log_evidence=evidence if sign > 0 else -np.inf,
                           objective_trace=trace)


def fit_laplace(data: PreferenceDataset, init: KernelSpec | None = None,
                lambda_init: float | None = None, *,
                lambda_grid=LAMBDA_GRID, lengthscale_grid=LENGTHSCALE_GRID,
                standardize: bool = True) -> PreferenceModel:
    """Laplace-approximate the utility posterior and pick hyperparameters by evidence.

    Passing ``lambda_grid=None`` / ``lengthscale_grid=None`` pins that
    hyperparameter at ``lambda_init`` / ``init``. Observables are standardised
    per dimension unless ``standardize`` is false.
    """
    if not data.duels:
        raise ContractViolation("fit_laplace needs at least one duel")
    dim = data.items.shape[1]
    init = init or KernelSpec.default(dim)
    if init.dim != dim:
        raise ContractViolation(f"kernel dimension {init.dim} does not match observables {dim}")
    scaler = InputScaler.fit(data.items) if standardize else InputScaler.identity(dim)
    Ys = scaler(data.items)
    win, lose = data.winners_losers
    lams = tuple(lambda_grid) if lambda_grid else (lambda_init if lambda_init is not None else 1.0,)
    if lengthscale_grid:
        kernels = [init.with_params(lengthscales=np.full(dim, ls)) for ls in lengthscale_grid]
    else:
        kernels = [init]
    best = None
    for kernel, lam in itertools.product(kernels, lams):
        try:
            model = _laplace(Ys, win, lose, kernel, float(lam))
        except FittingError as exc:
            log.debug("Laplace fit failed for %s, lambda=%g: %s", kernel, lam, exc)
            continue
        if best is None or model.log_evidence > best.log_evidence:
            best = model
    if best is None:
        raise FittingError("Laplace fit failed for every hyperparameter setting")
    best.scaler = scaler
    return best


def _scaled(model: PreferenceModel, Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    Y = Y[None, :] if Y.ndim == 1 else Y
    if Y.shape[-1] != model.input_dim:
        raise ContractViolation(
            f"observable has dimension {Y.shape[-1]}, model expects {model.input_dim}")
    return model.scaler(Y)


def utility_mean_var(model: PreferenceModel, Y) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and variance of the latent utility at each row of ``Y``."""
    S = _scaled(model, Y)
    prior = model.kernel.signal_variance
    if model.n_items == 0:
        return np.zeros(S.shape[0]), np.full(S.shape[0], prior)
    Ks = cross_cov(model.kernel, model.items, S)
    mean = Ks.T @ model.alpha
    var = prior - np.einsum("ij,ij->j", Ks, model.pred_matrix @ Ks)
    return mean, np.clip(var, 0.0, prior)


def utility_mean(model: PreferenceModel, Y) -> np.ndarray:
    S = _scaled(model, Y)
    if model.n_items == 0:
        return np.zeros(S.shape[0])
    return cross_cov(model.kernel, model.items, S).T @ model.alpha


def predict_utility(model: PreferenceModel, y) -> tuple[float, float]:
    mean, var = utility_mean_var(model, np.asarray(y, dtype=float).reshape(1, -1))
    return float(mean[0]), float(var[0])


def pair_moments(model: PreferenceModel, Y1, Y2):
    """Mean and variance of h(y1) - h(y2) for matched rows of ``Y1`` and ``Y2``."""
    S1 = _scaled(model, Y1)
    S2 = _scaled(model, Y2)
    k = model.kernel
    k12 = paired_cov(k, S1, S2)
    prior_var = 2 * k.signal_variance - 2 * k12
    if model.n_items == 0:
        return np.zeros(S1.shape[0]), np.maximum(prior_var, 0.0)
    K1 = cross_cov(k, model.items, S1)
    K2 = cross_cov(k, model.items, S2)
    D = K1 - K2
    mean = D.T @ model.alpha
    var = prior_var - np.einsum("ij,ij->j", D, model.pred_matrix @ D)
    return mean, np.maximum(var, 0.0)


def predict_preference_batch(model: PreferenceModel, Y1, Y2) -> np.ndarray:
    mean, var = pair_moments(model, Y1, Y2)
    return ndtr(mean / np.sqrt(2 * model.lam**2 + var))


def predict_preference(model: PreferenceModel, y1, y2) -> float:
    """Posterior probability that ``y1`` is preferred to ``y2``."""
    y1 = np.asarray(y1, dtype=float).reshape(1, -1)
    y2 = np.asarray(y2, dtype=float).reshape(1, -1)
    return float(predict_preference_batch(model, y1, y2)[0])


def info_gain_preference_batch(model: PreferenceModel, Y1, Y2, mc: int,
                               rng: np.random.Generator) -> np.ndarray:
    """BALD estimate of the information a duel between matched rows would reveal."""
    if mc < 2:
        raise ContractViolation("mc must be >= 2")
    mean, var = pair_moments(model, Y1, Y2)
    eps = rng.standard_normal((mean.size, mc))
    d = mean[:, None] + np.sqrt(var)[:, None] * eps
    p = ndtr(d / (_SQRT2 * model.lam))
    value = binary_entropy(p.mean(axis=1)) - binary_entropy(p).mean(axis=1)
    return np.clip(value, 0.0, _LN2)


def info_gain_preference(model: PreferenceModel, y1, y2, mc: int, rng: np.random.Generator) -> float:
    y1 = np.asarray(y1, dtype=float).reshape(1, -1)
    y2 = np.asarray(y2, dtype=float).reshape(1, -1)
    return float(info_gain_preference_batch(model, y1, y2, mc, rng)[0])


def model_to_dict(model: PreferenceModel) -> dict:
    from .objective import MODEL_FORMAT_VERSION

    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "preference",
        "kernel": model.kernel.to_dict(),
        "lambda": model.lam,
        "scaler": {"shift": model.scaler.shift.tolist(), "scale": model.scaler.scale.tolist()},
        "items": model.items.tolist(),
        "laplace_mode": model.laplace_mode.tolist(),
        "laplace_cov": model.laplace_cov.tolist(),
        "alpha": model.alpha.tolist(),
        "pred_matrix": model.pred_matrix.tolist(),
        "converged": model.converged,
        "newton_residual": model.newton_residual,
        "log_evidence": model.log_evidence,
    }


def model_from_dict(d: dict) -> PreferenceModel:
    from .objective import MODEL_FORMAT_VERSION

    if d.get("format_version") != MODEL_FORMAT_VERSION or d.get("kind") != "preference":
        raise ContractViolation("not a preference model document of a supported version")
    arr = lambda k: np.asarray(d[k], dtype=float)
    dim = len(d["scaler"]["shift"])
    return PreferenceModel(
        kernel=KernelSpec.from_dict(d["kernel"]), lam=float(d["lambda"]),
        items=arr("items").reshape(-1, dim),
        scaler=InputScaler(np.asarray(d["scaler"]["shift"]), np.asarray(d["scaler"]["scale"])),
        laplace_mode=arr("laplace_mode"), laplace_cov=arr("laplace_cov").reshape(len(d["laplace_mode"]), -1),
        alpha=arr("alpha"), pred_matrix=arr("pred_matrix").reshape(len(d["alpha"]), -1),
        converged=bool(d["converged"]), newton_residual=float(d["newton_residual"]),
        log_evidence=float(d["log_evidence"]))
