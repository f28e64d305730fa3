from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.exceptions import DimensionMismatchError, ValidationError


@dataclass(eq=False)
class InversionProblem:
    G: np.ndarray
    d: np.ndarray
    L: np.ndarray
    alpha: float = 0.0
    a: Optional[np.ndarray] = None

    def __post_init__(self):
        m, n = self.G.shape
        if self.d.shape != (m,):
            raise DimensionMismatchError(f"d has shape {self.d.shape}, expected ({m},)")
        if self.L.ndim != 2 or self.L.shape[1] != n:
            raise DimensionMismatchError(f"L has shape {self.L.shape}, expected (*, {n})")
        if self.alpha < 0.0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")


@dataclass(eq=False)
class InversionResult:
    a: np.ndarray
    alpha: float
    residual_norm: float
    seminorm: float


@dataclass(eq=False)
class LCurve:
    alphas: np.ndarray
    residual_norms: np.ndarray
    seminorms: np.ndarray
    curvature: np.ndarray        # NaN at both ends
    best_alpha: float
    best_index: int
