"""Objective-layer surrogate: independent GPs from scenarios to observables.

Two inference modes share one model type. ``fit_exact`` conditions each
output dimension on all data with marginal-likelihood-optimised
hyperparameters; ``fit_svgp`` trains a sparse variational GP per output with
inducing inputs, variational mean/covariance and hyperparameters tuned on
the evidence lower bound.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import ContractViolation, FittingError, NumericalError
from .kernels import (
    GramFactor,
    KernelFamily,
    KernelSpec,
    cross_cov,
    factorize,
    gram,
    gram_parts,
    pairwise_sq_diffs,
)

log = logging.getLogger(__name__)

LENGTHSCALE_BOUNDS = (1e-2, 1e2)
SIGNAL_BOUNDS = (1e-3, 1e3)
NOISE_BOUNDS = (1e-6, 1.0)
NOISE_FLOOR = 1e-8
MODEL_FORMAT_VERSION = 1


class GPMode(str, enum.Enum):
    EXACT = "Exact"
    SPARSE_VARIATIONAL = "SparseVariational"


@dataclass
class OptConfig:
    """Hyperparameter optimisation settings."""

    n_restarts: int = 5
    seed: int = 0
    maxiter: int = 200
    fix_noise: bool = False
    train_hyper: bool = True
    # SVGP only
    svgp_steps: int = 300
    svgp_lr: float = 0.02
    fix_inducing: bool = False
    inducing_init: np.ndarray | None = None


@dataclass(frozen=True)
class Normalizer:
    """Affine maps: X to the unit cube, Y to zero mean and unit variance."""

    x_lower: np.ndarray
    x_span: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, Y: np.ndarray, bounds=None) -> "Normalizer":
        if bounds is not None:
            lo = np.asarray(bounds[0], dtype=float)
            span = np.asarray(bounds[1], dtype=float) - lo
        else:
            lo = X.min(axis=0)
            span = X.max(axis=0) - lo
        span = np.where(span > 0, span, 1.0)
        mean = Y.mean(axis=0)
        std = Y.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(lo, span, mean, std)

    def x_to_unit(self, X):
        return (np.asarray(X, dtype=float) - self.x_lower) / self.x_span

    def x_from_unit(self, U):
        return np.asarray(U, dtype=float) * self.x_span + self.x_lower

    def y_to_std(self, Y):
        return (np.asarray(Y, dtype=float) - self.y_mean) / self.y_std

    def y_from_std(self, Z):
        return np.asarray(Z, dtype=float) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("x_lower", "x_span", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("x_lower", "x_span", "y_mean", "y_std")))


@dataclass
class ObjectiveDataset:
    X: np.ndarray
    Y: np.ndarray
    normalization: Normalizer = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        self.Y = Y[:, None] if Y.ndim == 1 else Y
        if self.X.shape[0] != self.Y.shape[0]:
            raise ContractViolation(
                f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}")
        if self.Y.shape[1] < 1:
            raise ContractViolation("observables must have at least one dimension")
        if self.normalization is None:
            self.normalization = Normalizer.fit(self.X, self.Y)

    @classmethod
    def with_bounds(cls, X, Y, lower, upper) -> "ObjectiveDataset":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.asarray(Y, dtype=float)
        Y = Y[:, None] if Y.ndim == 1 else Y
        return cls(X, Y, Normalizer.fit(X, Y, (lower, upper)))

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class InducingSet:
    Z: np.ndarray
    m_u: np.ndarray
    S_u: np.ndarray


@dataclass(frozen=True)
class GaussianPrediction:
    mean: np.ndarray
    variance: np.ndarray


@dataclass
class _OutputState:
    """Posterior state of one output dimension, in normalised units."""

    kernel: KernelSpec
    # exact mode
    factor: GramFactor | None = None
    alpha: np.ndarray | None = None
    # sparse mode
    inducing: InducingSet | None = None
    kuu_factor: GramFactor | None = None
    mean_weights: np.ndarray | None = None  # Kuu^-1 m_u
    var_matrix: np.ndarray | None = None  # Kuu^-1 (Kuu - S_u) Kuu^-1
    elbo_trace: list = field(default_factory=list)


@dataclass
class ObjectiveModel:
    mode: GPMode
    X_unit: np.ndarray
    normalization: Normalizer
    outputs: list

    @property
    def kernels(self) -> list:
        return [o.kernel for o in self.outputs]

    @property
    def inducing(self) -> list | None:
        if self.mode is GPMode.EXACT:
            return None
        return [o.inducing for o in self.outputs]

    @property
    def input_dim(self) -> int:
        return self.X_unit.shape[1]

    @property
    def output_dim(self) -> int:
        return len(self.outputs)

    @property
    def noise_floored(self) -> bool:
        return any(k.noise_variance < NOISE_FLOOR for k in self.kernels)


# --------------------------------------------------------------------------
# exact GP


def _pack(spec: KernelSpec) -> np.ndarray:
    return np.concatenate([np.log(spec.lengthscales),
                           [math.log(spec.signal_variance),
                            math.log(max(spec.noise_variance, NOISE_BOUNDS[0]))]])


def _unpack(theta: np.ndarray, family: KernelFamily, fixed_noise: float | None) -> KernelSpec:
    d = theta.size - 2
    noise = fixed_noise if fixed_noise is not None else math.exp(theta[d + 1])
    return KernelSpec(family, np.exp(theta[:d]), math.exp(theta[d]), noise)


def _log_bounds(d: int) -> list:
    lb = [(math.log(LENGTHSCALE_BOUNDS[0]), math.log(LENGTHSCALE_BOUNDS[1]))] * d
    return lb + [tuple(map(math.log, SIGNAL_BOUNDS)), tuple(map(math.log, NOISE_BOUNDS))]


def log_marginal_likelihood(spec: KernelSpec, X: np.ndarray, y: np.ndarray,
                            with_grad: bool = False, D2: np.ndarray | None = None):
    """Exact GP log marginal likelihood (and gradient w.r.t. the packed log-parameters).

    ``D2`` optionally supplies precomputed per-dimension squared differences of ``X``.
    """
    n = X.shape[0]
    if D2 is None:
        D2 = pairwise_sq_diffs(np.asarray(X, dtype=float))
    K, G = gram_parts(spec, D2)
    np.fill_diagonal(K, spec.signal_variance)
    Ky = K + spec.noise_variance * np.eye(n)
    fac = factorize(Ky)
    alpha = fac.solve(y)
    lml = -0.5 * y @ alpha - 0.5 * fac.log_det() - 0.5 * n * math.log(2 * math.pi)
    if not with_grad:
        return lml
    inner = np.outer(alpha, alpha) - fac.solve(np.eye(n))
    g_ls = 0.5 * ((inner * G).reshape(-1) @ D2.reshape(n * n, -1)) / spec.lengthscales ** 2
    g_sig = 0.5 * np.sum(inner * K)
    g_noise = 0.5 * np.trace(inner) * spec.noise_variance
    return lml, np.concatenate([g_ls, [g_sig, g_noise]])


def _optimize_hyper(X: np.ndarray, y: np.ndarray, init: KernelSpec, cfg: OptConfig,
                    rng: np.random.Generator) -> KernelSpec:
    d = X.shape[1]
    bounds = _log_bounds(d)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    fixed_noise = init.noise_variance if cfg.fix_noise else None
    D2 = pairwise_sq_diffs(X)

    def negative(theta):
        try:
            spec = _unpack(theta, init.family, fixed_noise)
            lml, grad = log_marginal_likelihood(spec, X, y, with_grad=True, D2=D2)
        except (NumericalError, FloatingPointError):
            return np.inf, np.zeros_like(theta)
        if fixed_noise is not None:
            grad[-1] = 0.0
        if not np.isfinite(lml) or not np.all(np.isfinite(grad)):
            return np.inf, np.zeros_like(theta)
        return -lml, -grad

    start = np.clip(_pack(init), lo, hi)
    best_theta, best_val = None, np.inf
    for restart in range(max(cfg.n_restarts, 1)):
        theta0 = start if restart == 0 else rng.uniform(lo, hi)
        theta0 = theta0.copy()
        if restart > 0:
            # keep lengthscales in a plausible range for unit-cube inputs
            theta0[:d] = rng.uniform(math.log(0.1), math.log(10.0), size=d)
        for _attempt in range(3):
            val0, _ = negative(theta0)
            if np.isfinite(val0):
                break
            theta0 = np.clip(theta0 + rng.normal(0, 0.5, theta0.size), lo, hi)
        else:
            continue
        res = optimize.minimize(negative, theta0, jac=True, method="L-BFGS-B",
                                bounds=bounds, options={"maxiter": cfg.maxiter})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x, res.fun
    if best_theta is None:
        raise FittingError("all hyperparameter restarts produced non-finite likelihoods")
    return _unpack(best_theta, init.family, fixed_noise)


def _init_for(init: KernelSpec | list, j: int, d: int) -> KernelSpec:
    spec = init[j] if isinstance(init, (list, tuple)) else init
    if spec.dim != d:
        raise ContractViolation(f"initial kernel has dimension {spec.dim}, data has {d}")
    return spec


def _exact_state(spec: KernelSpec, X: np.ndarray, y: np.ndarray) -> _OutputState:
    fac = gram(spec, X, add_noise=True)
    return _OutputState(kernel=spec, factor=fac, alpha=fac.solve(y))


def fit_exact(data: ObjectiveDataset, init: KernelSpec | list,
              opt_cfg: OptConfig | None = None) -> ObjectiveModel:
    """Fit one exact GP per output dimension.

    With a single training point (or ``opt_cfg.train_hyper=False``) the
    initial hyperparameters are kept; otherwise they are tuned by multi-start
    L-BFGS-B on the log marginal likelihood.
    """
    cfg = opt_cfg or OptConfig()
    norm = data.normalization
    X = norm.x_to_unit(data.X)
    Ys = norm.y_to_std(data.Y)
    rng = np.random.default_rng(cfg.seed)
    outputs = []
    for j in range(Ys.shape[1]):
        spec = _init_for(init, j, X.shape[1])
        if cfg.train_hyper and data.n >= 2:
            spec = _optimize_hyper(X, Ys[:, j], spec, cfg, rng)
        outputs.append(_exact_state(spec, X, Ys[:, j]))
    return ObjectiveModel(GPMode.EXACT, X, norm, outputs)


def condition(model: ObjectiveModel, data: ObjectiveDataset) -> ObjectiveModel:
    """Recondition an exact model on new data, keeping its hyperparameters and normalisation."""
    X = model.normalization.x_to_unit(data.X)
    Ys = model.normalization.y_to_std(data.Y)
    outputs = [_exact_state(o.kernel, X, Ys[:, j]) for j, o in enumerate(model.outputs)]
    return ObjectiveModel(GPMode.EXACT, X, model.normalization, outputs)


# --------------------------------------------------------------------------
# sparse variational GP


def _kmeans_pp(X: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    from sklearn.cluster import kmeans_plusplus

    centers, _ = kmeans_plusplus(X, m, random_state=int(rng.integers(2**31 - 1)))
    return centers


def _svgp_torch_terms(torch, X, y, Z, log_ls, log_sig, log_noise, family):
    """Return (Kuu, Kuf, kff_diag, noise) torch tensors for the ELBO."""

    def k(A, B):
        A = A / torch.exp(log_ls)
        B = B / torch.exp(log_ls)
        r2 = (A.pow(2).sum(-1)[:, None] + B.pow(2).sum(-1)[None, :] - 2 * A @ B.T).clamp_min(0)
        if family is KernelFamily.SQUARED_EXPONENTIAL:
            prof = torch.exp(-0.5 * r2)
        else:
            r = torch.sqrt(r2 + 1e-30)
            prof = (1 + math.sqrt(5) * r + 5.0 / 3.0 * r2) * torch.exp(-math.sqrt(5) * r)
        return torch.exp(log_sig) * prof

    Kuu = k(Z, Z)
    Kuu = 0.5 * (Kuu + Kuu.T)
    Kuf = k(Z, X)
    kff = torch.exp(log_sig).expand(X.shape[0])
    return Kuu, Kuf, kff, torch.exp(log_noise)


def _torch_chol(torch, A):
    eye = torch.eye(A.shape[0], dtype=A.dtype)
    for jitter in (0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2):
        L, info = torch.linalg.cholesky_ex(A + jitter * eye)
        if int(info) == 0:
            return L
    raise NumericalError("Cholesky of inducing covariance failed at maximum jitter")


def _optimal_q(torch, Kuu, Kuf, y, noise):
    """Closed-form optimum of q(u) for a Gaussian likelihood."""
    A = Kuu + Kuf @ Kuf.T / noise
    LA = _torch_chol(torch, 0.5 * (A + A.T))
    # Sigma = A^-1; m_u = Kuu Sigma Kuf y / noise; S_u = Kuu Sigma Kuu
    b = Kuf @ y / noise
    sig_b = torch.cholesky_solve(b[:, None], LA)[:, 0]
    m_u = Kuu @ sig_b
    sig_kuu = torch.cholesky_solve(Kuu, LA)
    S_u = Kuu @ sig_kuu
    return m_u, 0.5 * (S_u + S_u.T)


def _elbo_torch(torch, Kuu, Kuf, kff, noise, y, m_u, S_u):
    m = Kuu.shape[0]
    n = y.shape[0]
    Lu = _torch_chol(torch, Kuu)
    Amat = torch.cholesky_solve(Kuf, Lu)  # Kuu^-1 Kuf, m x n
    mean = Amat.T @ m_u
    q_diag = (Kuf * Amat).sum(0)
    s_diag = (Amat * (S_u @ Amat)).sum(0)
    var = (kff - q_diag + s_diag).clamp_min(0)
    ell = -0.5 * n * torch.log(2 * math.pi * noise) - 0.5 * ((y - mean).pow(2) + var).sum() / noise
    LS = _torch_chol(torch, S_u)
    kuu_inv_S = torch.cholesky_solve(S_u, Lu)
    kuu_inv_m = torch.cholesky_solve(m_u[:, None], Lu)[:, 0]
    kl = 0.5 * (torch.diagonal(kuu_inv_S).sum() + m_u @ kuu_inv_m - m
                + 2 * torch.log(torch.diagonal(Lu)).sum()
                - 2 * torch.log(torch.diagonal(LS)).sum())
    return ell - kl


def svgp_elbo(spec: KernelSpec, X: np.ndarray, y: np.ndarray, inducing: InducingSet) -> float:
    """ELBO of a sparse variational GP for a single output, in the given (normalised) units."""
    import torch

    t = lambda a: torch.as_tensor(np.asarray(a, dtype=float), dtype=torch.float64)
    with torch.no_grad():
        Kuu, Kuf, kff, noise = _svgp_torch_terms(
            torch, t(X), t(y), t(inducing.Z), t(np.log(spec.lengthscales)),
            t(math.log(spec.signal_variance)), t(math.log(max(spec.noise_variance, NOISE_FLOOR))),
            spec.family)
        return float(_elbo_torch(torch, Kuu, Kuf, kff, noise, t(y), t(inducing.m_u), t(inducing.S_u)))


def _sparse_state(spec: KernelSpec, inducing: InducingSet, trace: list) -> _OutputState:
    kuu = cross_cov(spec, inducing.Z, inducing.Z)
    np.fill_diagonal(kuu, spec.signal_variance)
    fac = factorize(kuu)
    w = fac.solve(inducing.m_u)
    kinv = fac.solve(np.eye(kuu.shape[0]))
    var_matrix = kinv @ (fac.matrix - inducing.S_u) @ kinv
    return _OutputState(kernel=spec, inducing=inducing, kuu_factor=fac, mean_weights=w,
                        var_matrix=0.5 * (var_matrix + var_matrix.T), elbo_trace=trace)


def _fit_svgp_output(X, y, Z0, spec, cfg):
    import torch

    t = lambda a: torch.as_tensor(np.asarray(a, dtype=float), dtype=torch.float64)
    Xt, yt = t(X), t(y)
    Z = t(Z0).clone().requires_grad_(not cfg.fix_inducing)
    log_ls = t(np.log(spec.lengthscales)).clone().requires_grad_(cfg.train_hyper)
    log_sig = t(math.log(spec.signal_variance)).clone().requires_grad_(cfg.train_hyper)
    fixed_noise = cfg.fix_noise or not cfg.train_hyper
    log_noise = t(math.log(max(spec.noise_variance, NOISE_BOUNDS[0]))).clone()
    log_noise.requires_grad_(not fixed_noise)
    params = [p for p in (Z, log_ls, log_sig, log_noise) if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.svgp_lr) if params else None
    lo_ls, hi_ls = map(math.log, LENGTHSCALE_BOUNDS)
    lo_s, hi_s = map(math.log, SIGNAL_BOUNDS)
    lo_n, hi_n = map(math.log, NOISE_BOUNDS)

    def evaluate():
        Kuu, Kuf, kff, noise = _svgp_torch_terms(torch, Xt, yt, Z, log_ls, log_sig, log_noise,
                                                 spec.family)
        with torch.no_grad():
            m_u, S_u = _optimal_q(torch, Kuu, Kuf, yt, noise)
        return _elbo_torch(torch, Kuu, Kuf, kff, noise, yt, m_u, S_u), m_u, S_u

    trace = []
    best = None
    steps = cfg.svgp_steps if opt is not None else 0
    for step in range(steps + 1):
        # q(u) is set to its optimum for the current (Z, theta): a unit natural-gradient step
        elbo, m_u, S_u = evaluate()
        val = float(elbo.detach())
        if not math.isfinite(val):
            raise FittingError("non-finite ELBO during sparse GP optimisation")
        trace.append(val)
        if best is None or val > best[0]:
            best = (val, Z.detach().clone(), log_ls.detach().clone(), log_sig.detach().clone(),
                    log_noise.detach().clone(), m_u.detach().clone(), S_u.detach().clone())
        if step == steps:
            break
        opt.zero_grad()
        (-elbo).backward()
        opt.step()
        with torch.no_grad():
            log_ls.clamp_(lo_ls, hi_ls)
            log_sig.clamp_(lo_s, hi_s)
            log_noise.clamp_(lo_n, hi_n)
    _, Zb, lsb, sigb, noiseb, mb, Sb = best
    noise = spec.noise_variance if fixed_noise else math.exp(float(noiseb))
    fitted = KernelSpec(spec.family, np.exp(lsb.numpy()), math.exp(float(sigb)), noise)
    trace.append(best[0])
    return fitted, InducingSet(Zb.numpy().copy(), mb.numpy().copy(), Sb.numpy().copy()), trace


def fit_svgp(data: ObjectiveDataset, m: int, init: KernelSpec | list,
             opt_cfg: OptConfig | None = None) -> ObjectiveModel:
    """Fit one sparse variational GP per output with ``m`` inducing points.

    Inducing inputs start from k-means++ seeding over the (unit-cube) inputs
    unless ``opt_cfg.inducing_init`` is given. The ELBO trace of each output is
    kept on the model; its last entry is the returned (best) ELBO.
    """
    cfg = opt_cfg or OptConfig()
    if not 1 <= m <= data.n:
        raise ContractViolation(f"need 1 <= m <= n, got m={m}, n={data.n}")
    norm = data.normalization
    X = norm.x_to_unit(data.X)
    Ys = norm.y_to_std(data.Y)
    rng = np.random.default_rng(cfg.seed)
    if cfg.inducing_init is not None:
        Z0 = norm.x_to_unit(cfg.inducing_init)
        if Z0.shape != (m, X.shape[1]):
            raise ContractViolation(f"inducing_init must have shape {(m, X.shape[1])}")
    else:
        Z0 = _kmeans_pp(X, m, rng)
    outputs = []
    for j in range(Ys.shape[1]):
        spec = _init_for(init, j, X.shape[1])
        fitted, ind, trace = _fit_svgp_output(X, Ys[:, j], Z0, spec, cfg)
        outputs.append(_sparse_state(fitted, ind, trace))
    return ObjectiveModel(GPMode.SPARSE_VARIATIONAL, X, norm, outputs)


# --------------------------------------------------------------------------
# prediction


def _as_unit_batch(model: ObjectiveModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    X = X[None, :] if X.ndim == 1 else X
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ContractViolation(
            f"input has dimension {X.shape[-1]}, model expects {model.input_dim}")
    return model.normalization.x_to_unit(X)


def predict_normalized(model: ObjectiveModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Latent mean and variance for a batch, in normalised output units (n x d_y)."""
    U = _as_unit_batch(model, X)
    means, variances = [], []
    for o in model.outputs:
        s = o.kernel
        if model.mode is GPMode.EXACT:
            Ks = cross_cov(s, model.X_unit, U)
            mu = Ks.T @ o.alpha
            v = linalg.solve_triangular(o.factor.chol_lower, Ks, lower=True, check_finite=False)
            var = s.signal_variance - np.einsum("ij,ij->j", v, v)
        else:
            Ks = cross_cov(s, o.inducing.Z, U)
            mu = Ks.T @ o.mean_weights
            var = s.signal_variance - np.einsum("ij,ij->j", Ks, o.var_matrix @ Ks)
        means.append(mu)
        variances.append(np.clip(var, 0.0, s.signal_variance))
    return np.stack(means, axis=1), np.stack(variances, axis=1)


def predict_batch(model: ObjectiveModel, X) -> tuple[np.ndarray, np.ndarray]:
    mu, var = predict_normalized(model, X)
    norm = model.normalization
    return norm.y_from_std(mu), var * norm.y_std**2


def predict(model: ObjectiveModel, x) -> GaussianPrediction:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ContractViolation("predict takes a single point; use predict_batch for batches")
    mu, var = predict_batch(model, x)
    return GaussianPrediction(mu[0], var[0])


def sample_observables(model: ObjectiveModel, x, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` observable vectors from the latent predictive at ``x`` (count x d_y)."""
    if count < 1:
        raise ContractViolation("count must be >= 1")
    pred = predict(model, x)
    eps = rng.standard_normal((count, pred.mean.size))
    return pred.mean + eps * np.sqrt(pred.variance)


def info_gain_objective_batch(model: ObjectiveModel, X) -> np.ndarray:
    """Gaussian mutual information between latent outputs and a noisy observation, per row."""
    _, var = predict_normalized(model, X)
    noise = np.array([k.noise_variance for k in model.kernels])
    if np.any(noise < NOISE_FLOOR):
        log.warning("noise variance below %g; flooring for information gain", NOISE_FLOOR)
        noise = np.maximum(noise, NOISE_FLOOR)
    return np.maximum(0.5 * np.log1p(var / noise).sum(axis=1), 0.0)


def info_gain_objective(model: ObjectiveModel, x) -> float:
    return float(info_gain_objective_batch(model, np.asarray(x, dtype=float)[None, :])[0])


# --------------------------------------------------------------------------
# serialisation


def model_to_dict(model: ObjectiveModel) -> dict:
    outs = []
    for o in model.outputs:
        entry = {"kernel": o.kernel.to_dict()}
        if o.inducing is not None:
            entry["inducing"] = {"Z": o.inducing.Z.tolist(), "m_u": o.inducing.m_u.tolist(),
                                 "S_u": o.inducing.S_u.tolist()}
        outs.append(entry)
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "objective",
        "mode": model.mode.value,
        "normalization": model.normalization.to_dict(),
        "X_unit": model.X_unit.tolist(),
        "outputs": outs,
    }


def model_from_dict(d: dict, Y: np.ndarray | None = None) -> ObjectiveModel:
    """Rebuild a model document. Exact mode needs the training targets ``Y`` (original units)."""
    if d.get("format_version") != MODEL_FORMAT_VERSION or d.get("kind") != "objective":
        raise ContractViolation("not an objective model document of a supported version")
    norm = Normalizer.from_dict(d["normalization"])
    X = np.asarray(d["X_unit"], dtype=float)
    mode = GPMode(d["mode"])
    outputs = []
    for j, entry in enumerate(d["outputs"]):
        spec = KernelSpec.from_dict(entry["kernel"])
        if mode is GPMode.EXACT:
            if Y is None:
                raise ContractViolation("exact-mode models need training targets to rebuild")
            outputs.append(_exact_state(spec, X, norm.y_to_std(np.asarray(Y, dtype=float))[:, j]))
        else:
            ind = entry["inducing"]
            outputs.append(_sparse_state(spec, InducingSet(
                np.asarray(ind["Z"]), np.asarray(ind["m_u"]), np.asarray(ind["S_u"])), []))
    return ObjectiveModel(mode, X, norm, outputs)
