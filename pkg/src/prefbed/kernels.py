"""Stationary covariance functions and jitter-stabilised Gram factorisation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .errors import ContractViolation, NumericalError

JITTER_LADDER = (0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)

_SQRT5 = np.sqrt(5.0)


class KernelFamily(str, enum.Enum):
    SQUARED_EXPONENTIAL = "SquaredExponential"
    MATERN52 = "Matern52"


@dataclass(frozen=True)
class KernelSpec:
    """ARD stationary kernel with a Gaussian observation-noise term.

    ``lengthscales`` holds one positive value per input dimension.
    """

    family: KernelFamily
    lengthscales: np.ndarray
    signal_variance: float = 1.0
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.array(self.lengthscales, dtype=float).reshape(-1)
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "family", KernelFamily(self.family))
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if ls.size == 0 or not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ContractViolation(f"lengthscales must be positive and finite, got {ls}")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ContractViolation(f"signal_variance must be > 0, got {self.signal_variance}")
        if not (np.isfinite(self.noise_variance) and self.noise_variance >= 0):
            raise ContractViolation(f"noise_variance must be >= 0, got {self.noise_variance}")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    @classmethod
    def default(cls, dim: int, family: KernelFamily | str = KernelFamily.SQUARED_EXPONENTIAL,
                lengthscale: float = 1.0, signal_variance: float = 1.0,
                noise_variance: float = 0.0) -> "KernelSpec":
        return cls(KernelFamily(family), np.full(dim, float(lengthscale)),
                   signal_variance, noise_variance)

    def with_params(self, **changes) -> "KernelSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "lengthscales": self.lengthscales.tolist(),
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(KernelFamily(d["family"]), np.asarray(d["lengthscales"], dtype=float),
                   d["signal_variance"], d["noise_variance"])


@dataclass(frozen=True)
class GramFactor:
    """A Gram matrix together with the lower Cholesky factor of ``matrix + jitter_used * I``."""

    matrix: np.ndarray
    chol_lower: np.ndarray
    jitter_used: float = field(default=0.0)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return linalg.cho_solve((self.chol_lower, True), b, check_finite=False)

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol_lower))))


def _check_dim(spec: KernelSpec, X: np.ndarray, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.dim:
        raise ContractViolation(
            f"{name} has trailing dimension {X.shape[-1]}, kernel expects {spec.dim}")
    return X


def _profile(family: KernelFamily, r2: np.ndarray) -> np.ndarray:
    if family is KernelFamily.SQUARED_EXPONENTIAL:
        return np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    return (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)


def scaled_sqdist(spec: KernelSpec, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    """Pairwise squared distances after dividing each coordinate by its lengthscale."""
    A = X1 / spec.lengthscales
    B = X2 / spec.lengthscales
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kernel_eval(spec: KernelSpec, x1, x2) -> float:
    """Evaluate k(x1, x2) for two single points."""
    a = np.asarray(x1, dtype=float).reshape(-1)
    b = np.asarray(x2, dtype=float).reshape(-1)
    if a.size != spec.dim or b.size != spec.dim:
        raise ContractViolation(
            f"points of dimension {a.size} and {b.size}, kernel expects {spec.dim}")
    d = (a - b) / spec.lengthscales
    r2 = float(np.sum(d * d))
    return spec.signal_variance * float(_profile(spec.family, np.asarray(r2)))


def cross_cov(spec: KernelSpec, X1, X2) -> np.ndarray:
    """Cross-covariance matrix k(X1, X2) without noise."""
    X1 = _check_dim(spec, X1, "X1")
    X2 = _check_dim(spec, X2, "X2")
    return spec.signal_variance * _profile(spec.family, scaled_sqdist(spec, X1, X2))


def paired_cov(spec: KernelSpec, X1, X2) -> np.ndarray:
    """Row-wise covariances k(X1[i], X2[i])."""
    X1 = _check_dim(spec, X1, "X1")
    X2 = _check_dim(spec, X2, "X2")
    d = (X1 - X2) / spec.lengthscales
    return spec.signal_variance * _profile(spec.family, np.sum(d * d, axis=1))


def kernel_diag(spec: KernelSpec, X) -> np.ndarray:
    X = _check_dim(spec, X, "X")
    return np.full(X.shape[0], spec.signal_variance)


def pairwise_sq_diffs(X: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (n, n, d); independent of the kernel."""
    X = np.asarray(X, dtype=float)
    diff = X[:, None, :] - X[None, :, :]
    return diff * diff


def gram_parts(spec: KernelSpec, D2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(K, G)`` from raw squared differences, with dK/d(log l_j) = G * D2[..., j] / l_j^2."""
    inv = 1.0 / spec.lengthscales ** 2
    n = D2.shape[0]
    r2 = (D2.reshape(n * n, -1) @ inv).reshape(n, n)
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        K = spec.signal_variance * np.exp(-0.5 * r2)
        return K, K
    r = np.sqrt(r2)
    e = np.exp(-_SQRT5 * r)
    K = spec.signal_variance * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * e
    G = spec.signal_variance * (5.0 / 3.0) * (1.0 + _SQRT5 * r) * e
    return K, G


def gram_with_grads(spec: KernelSpec, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free Gram matrix and its derivatives w.r.t. log-lengthscales.

    Returns ``(K, dK)`` where ``dK[j]`` is dK/d(log lengthscale_j). The
    derivative w.r.t. log signal variance is ``K`` itself.
    """
    X = _check_dim(spec, X, "X")
    D2 = pairwise_sq_diffs(X)
    K, G = gram_parts(spec, D2)
    dK = np.moveaxis(G[:, :, None] * D2 / spec.lengthscales ** 2, 2, 0)
    return K, dK


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def factorize(matrix: np.ndarray) -> GramFactor:
    """Cholesky with the escalating jitter ladder; raises NumericalError when exhausted."""
    matrix = symmetrize(np.asarray(matrix, dtype=float))
    n = matrix.shape[0]
    eye = np.eye(n)
    for jitter in JITTER_LADDER:
        try:
            L = linalg.cholesky(matrix + jitter * eye, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            continue
        return GramFactor(matrix, L, jitter)
    with np.errstate(all="ignore"):
        try:
            cond = float(np.linalg.cond(matrix))
            eig_min = float(np.linalg.eigvalsh(matrix).min())
        except np.linalg.LinAlgError:
            cond, eig_min = float("nan"), float("nan")
    raise NumericalError(
        f"Cholesky failed at maximum jitter {JITTER_LADDER[-1]:g} "
        f"(n={n}, condition number={cond:.3e}, min eigenvalue={eig_min:.3e})")


def gram(spec: KernelSpec, X, add_noise: bool = False) -> GramFactor:
    """Build and factorise the Gram matrix of ``X`` (optionally with the noise diagonal)."""
    X = _check_dim(spec, X, "X")
    if X.shape[0] < 1:
        raise ContractViolation("gram requires at least one row")
    K = cross_cov(spec, X, X)
    np.fill_diagonal(K, spec.signal_variance)
    if add_noise:
        K[np.diag_indices_from(K)] += spec.noise_variance
    return factorize(K)
