"""Toy regression distribution: uniform-cube inputs, noisy tanh teacher."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DataModel", "draw_datum", "draw_data"]


@dataclass(frozen=True)
class DataModel:
    """Joint law of one observation (x, y).

    x is uniform on [-1, 1]^d and y = tanh(<x, teacher>) + noise with
    centered Gaussian noise of deviation noise_std.  The teacher direction
    must have unit norm.
    """

    teacher: np.ndarray
    noise_std: float = 0.01

    def __post_init__(self):
        teacher = np.asarray(self.teacher, dtype=float)
        if teacher.ndim != 1:
            raise ValueError("teacher must be a 1-d vector")
        if abs(np.linalg.norm(teacher) - 1.0) > 1e-12:
            raise ValueError("teacher must have unit norm")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be nonnegative")
        object.__setattr__(self, "teacher", teacher)

    @property
    def dim(self) -> int:
        return self.teacher.shape[0]

    @classmethod
    def with_random_teacher(cls, dim: int = 5, seed: int = 0,
                            noise_std: float = 0.01) -> "DataModel":
        """Teacher drawn from a standard normal and scaled to unit norm."""
        v = np.random.default_rng(seed).standard_normal(dim)
        return cls(v / np.linalg.norm(v), noise_std)


def draw_datum(model: DataModel, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One observation; draw order (x first, then noise) is part of the
    reproducibility contract."""
    x = rng.uniform(-1.0, 1.0, model.dim)
    y = float(np.tanh(x @ model.teacher)) + model.noise_std * float(rng.standard_normal())
    return x, y


def draw_data(model: DataModel, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """n observations drawn in one batch (all inputs, then all noises)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = rng.uniform(-1.0, 1.0, (n, model.dim))
    ys = np.tanh(xs @ model.teacher) + model.noise_std * rng.standard_normal(n)
    return xs, ys
