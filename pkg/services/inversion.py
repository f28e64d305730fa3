"""
Regularized least squares for unit-slip coefficients:

    minimize |G a - d|^2 + alpha^2 |L a|^2

solved through the normal equations with a dense Cholesky factorization (in the
eigenbasis of L^T L, where the penalty term is diagonal), and
the L-curve corner search over a grid of alphas.
"""

from typing import Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve, eigh
from scipy.spatial.distance import cdist

from core.exceptions import DegenerateLCurveError, DimensionMismatchError, SingularNormalMatrixError, ValidationError
from models.fault import FaultPatch, UnitSlip
from models.inversion import InversionProblem, InversionResult, LCurve

logger = logging.getLogger(__name__)

NEIGHBOR_SLACK = 1e-6
NULLSPACE_RTOL = 1e-12


def neighbor_graph(centers: np.ndarray) -> np.ndarray:
    """Adjacency of unit-slip centers: pairs at the minimum center spacing."""
    centers = np.asarray(centers, dtype=np.float64)
    n = len(centers)
    adjacency = np.zeros((n, n), dtype=bool)
    if n < 2:
        return adjacency
    dist = cdist(centers, centers)
    off = dist[~np.eye(n, dtype=bool)]
    spacing = off[off > 0.0].min()
    adjacency = (dist > 0.0) & (dist <= spacing * (1.0 + NEIGHBOR_SLACK))
    return adjacency


def build_smoothing_matrix(centers) -> np.ndarray:
    """Graph Laplacian of the center grid, once for strike and once for dip coefficients."""
    adjacency = neighbor_graph(centers).astype(np.float64)
    laplacian = np.diag(adjacency.sum(axis=1)) - adjacency
    return block_diag(laplacian, laplacian)


def penalty_basis(L: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of L^T L, null space first, with null eigenvalues set to exactly zero."""
    L = np.asarray(L, dtype=np.float64)
    eigenvalues, vectors = eigh(L.T @ L)
    floor = NULLSPACE_RTOL * max(float(eigenvalues.max(initial=0.0)), 0.0)
    return np.where(eigenvalues <= floor, 0.0, eigenvalues), vectors


def solve_regularized(
    G: np.ndarray,
    d: np.ndarray,
    L: np.ndarray,
    alpha: float,
    basis: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> InversionResult:
    """Normal equations (G^T G + alpha^2 L^T L) a = G^T d, Cholesky-factored in the eigenbasis of L^T L."""
    problem = InversionProblem(G=np.asarray(G, dtype=np.float64), d=np.asarray(d, dtype=np.float64),
                               L=np.asarray(L, dtype=np.float64), alpha=float(alpha))
    G, d, L = problem.G, problem.d, problem.L
    eigenvalues, vectors = basis if basis is not None else penalty_basis(L)
    GV = G @ vectors
    normal = GV.T @ GV + np.diag(alpha ** 2 * eigenvalues)
    try:
        factor = cho_factor(normal, lower=True)
    except LinAlgError as e:
        raise SingularNormalMatrixError(alpha) from e
    a = vectors @ cho_solve(factor, GV.T @ d)
    if not np.all(np.isfinite(a)):
        raise SingularNormalMatrixError(alpha)
    result = InversionResult(
        a=a,
        alpha=float(alpha),
        residual_norm=float(np.linalg.norm(G @ a - d)),
        seminorm=float(np.linalg.norm(L @ a)),
    )
    logger.debug(f"alpha={alpha:.3e}: residual {result.residual_norm:.6e}, seminorm {result.seminorm:.6e}")
    return result


def menger_curvature(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Signed curvature of the circle through each point and its two neighbors; NaN at both ends."""
    k = np.full(len(x), np.nan)
    for i in range(1, len(x) - 1):
        ax, ay = x[i] - x[i - 1], y[i] - y[i - 1]
        bx, by = x[i + 1] - x[i], y[i + 1] - y[i]
        cross = ax * by - ay * bx
        denom = np.hypot(ax, ay) * np.hypot(bx, by) * np.hypot(x[i + 1] - x[i - 1], y[i + 1] - y[i - 1])
        k[i] = 2.0 * cross / denom if denom > 0.0 else 0.0
    return k


def alpha_grid(alpha_min: float, alpha_max: float, count: int) -> np.ndarray:
    if count < 5:
        raise ValidationError(f"the alpha grid needs at least 5 points, got {count}")
    if not (0.0 < alpha_min < alpha_max):
        raise ValidationError(f"alpha grid bounds must satisfy 0 < min < max, got ({alpha_min}, {alpha_max})")
    return np.logspace(np.log10(alpha_min), np.log10(alpha_max), count)


def select_alpha_lcurve(G: np.ndarray, d: np.ndarray, L: np.ndarray, alphas: Sequence[float]) -> Tuple[float, LCurve]:
    alphas = np.sort(np.asarray(alphas, dtype=np.float64))
    if alphas.size < 5:
        raise ValidationError(f"the L-curve needs at least 5 alphas, got {alphas.size}")
    if np.any(alphas <= 0.0):
        raise ValidationError("L-curve alphas must all be positive")

    basis = penalty_basis(L)
    results = [solve_regularized(G, d, L, a, basis) for a in alphas]
    residuals = np.array([r.residual_norm for r in results])
    seminorms = np.array([r.seminorm for r in results])
    if np.any(residuals <= 0.0) or np.any(seminorms <= 0.0):
        raise DegenerateLCurveError("L-curve has zero residual or zero seminorm points, log scale undefined")
    if np.ptp(residuals) <= 1e-12 * residuals.max():
        raise DegenerateLCurveError("all L-curve residuals are equal, no corner to select")

    curvature = menger_curvature(np.log(residuals), np.log(seminorms))
    interior = curvature[1:-1]
    best_value = np.max(interior)
    # ties toward larger alpha
    best = 1 + int(np.flatnonzero(interior == best_value)[-1])
    curve = LCurve(
        alphas=alphas,
        residual_norms=residuals,
        seminorms=seminorms,
        curvature=curvature,
        best_alpha=float(alphas[best]),
        best_index=best,
    )
    logger.info(f"L-curve corner at alpha={curve.best_alpha:.3e} (grid point {best} of {alphas.size})")
    return curve.best_alpha, curve


def expand_slip(patch: FaultPatch, slips: Sequence[UnitSlip], coefficients) -> np.ndarray:
    """Per-fault-node slip vectors sum_i a_i phi_i (K, 3)."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape != (len(slips),):
        raise DimensionMismatchError(f"{coefficients.size} coefficients for {len(slips)} unit slips")
    index = patch.node_index
    out = np.zeros((len(patch.fault_nodes), 3))
    for a, slip in zip(coefficients, slips):
        rows = np.array([index[int(n)] for n in slip.nodes], dtype=np.int64)
        out[rows] += a * slip.magnitude[:, None] * patch.direction_vectors(slip.direction)[rows]
    return out
