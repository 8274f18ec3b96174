"""Box-shaped scenario domains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class ScenarioSpace:
    """Axis-aligned box; ``binary_dims`` are relaxed to [0, 1] and thresholded by the benchmark."""

    lower: np.ndarray
    upper: np.ndarray
    binary_dims: tuple = ()

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise ContractViolation("lower and upper bounds must be non-empty and the same length")
        if not np.all(lo < hi):
            raise ContractViolation("every lower bound must be strictly below its upper bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        dims = tuple(sorted(int(i) for i in self.binary_dims))
        if any(i < 0 or i >= lo.size for i in dims):
            raise ContractViolation("binary dimension index out of range")
        object.__setattr__(self, "binary_dims", dims)

    @classmethod
    def unit(cls, dim: int, binary_dims=()) -> "ScenarioSpace":
        return cls(np.zeros(dim), np.ones(dim), binary_dims)

    @property
    def dim(self) -> int:
        return self.lower.size

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(count, self.dim))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def clip(self, x) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise ContractViolation(f"scenario has {x.size} dimensions, space has {self.dim}")
        if not self.contains(x):
            raise ContractViolation("scenario lies outside the space bounds")
        return x
