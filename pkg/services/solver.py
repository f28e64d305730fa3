"""
Adaptive (flexible) conjugate gradients with a three-level mixed-precision preconditioner.

The outer loop runs in float64 over all batch columns at once. Each preconditioner
application solves roughly, in float32, on level 2 (aggregated P1), then level 1 (P1),
then level 0 (P2), each level warm-started from the prolongated coarser answer.
Convergence is decided on the maximum over columns of squared relative residuals.
"""

from contextlib import contextmanager
from typing import Callable, List, Optional, Tuple, Union
import logging
import time

import numpy as np

from core.exceptions import ConvergenceError, DimensionMismatchError, SolverBreakdownError
from models.operators import BlockCsrMatrix, BlockJacobi
from models.reports import LEVEL_NAMES, SolveReport
from models.vectors import Precision, VectorBatch
from schemas.config import InnerLoopConfig, SolverConfig, SolverMethod
from services.ebe import EbeOperator, apply_operator, extract_block_jacobi
from services.multigrid import MultigridHierarchy

logger = logging.getLogger(__name__)

Operator = Union[EbeOperator, BlockCsrMatrix]

# phases recorded in SolveReport.timings
PHASE_OUTER_EBE = "outer_ebe_p2_f64"
PHASE_INNER_EBE = "inner_ebe_p2_f32"
PHASE_P1_EBE = "inner_ebe_p1_f32"
PHASE_LEVEL2 = "inner_bcsr_level2_f32"
PHASE_PRECONDITIONER = "preconditioner"
PHASE_TOTAL = "total"

INNER_CAP_WARN_FRACTION = 0.5


@contextmanager
def _stopwatch(report: Optional[SolveReport], phase: str):
    start = time.perf_counter()
    try:
        yield
    finally:
        if report is not None:
            report.add_time(phase, time.perf_counter() - start)


def _timed_apply(op: Operator, report: Optional[SolveReport], phase: str) -> Callable[[VectorBatch], VectorBatch]:
    def apply(v: VectorBatch) -> VectorBatch:
        with _stopwatch(report, phase):
            return apply_operator(op, v)

    return apply


def _ratios(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num/den per column; a zero denominator compares the absolute value."""
    safe = np.where(den > 0.0, den, 1.0)
    return num / safe


def _scale(coef: np.ndarray, v: VectorBatch) -> np.ndarray:
    return coef.astype(v.data.dtype)[None, None, :] * v.data


def _step_lengths(rho: np.ndarray, gamma: np.ndarray, iteration: int, level: str) -> np.ndarray:
    """alpha = rho / gamma per column; columns with nothing left to reduce get 0."""
    idle = (rho == 0.0) & (gamma == 0.0)
    if np.any(np.isnan(gamma)) or np.any(np.isnan(rho)):
        raise SolverBreakdownError("NaN in inner products", iteration, level)
    bad = (gamma <= 0.0) & ~idle
    if np.any(bad):
        col = int(np.flatnonzero(bad)[0])
        raise SolverBreakdownError(
            f"(p, Kp) = {float(gamma[col]):.3e} <= 0 in column {col}, operator is not positive definite",
            iteration,
            level,
        )
    return np.where(idle, 0.0, rho / np.where(idle, 1.0, gamma))


def inner_pcg(
    a: Operator,
    m: BlockJacobi,
    r: VectorBatch,
    u0: VectorBatch,
    tol: float,
    max_iter: int,
    level: str = "inner",
    apply: Optional[Callable[[VectorBatch], VectorBatch]] = None,
) -> Tuple[VectorBatch, int]:
    """
    Block-Jacobi PCG on A u = r in the precision of r, starting from u0.

    Stops when max over columns of |e|^2 / |r|^2 <= tol or after max_iter updates.
    Returns the approximate solution and the number of updates performed.
    """
    if u0.data.shape != r.data.shape:
        raise DimensionMismatchError(f"initial guess shape {u0.data.shape} does not match {r.data.shape}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    apply = apply or (lambda v: apply_operator(a, v))

    u = u0.copy()
    rr = r.column_norm2()
    e = VectorBatch(r.data - apply(u).data)
    p: Optional[np.ndarray] = None
    rho_prev = None
    iteration = 0

    while iteration < max_iter:
        err = float(np.max(_ratios(e.column_norm2(), rr)))
        if not np.isfinite(err):
            raise SolverBreakdownError("non-finite residual", iteration, level)
        if err <= tol:
            break
        iteration += 1
        z = m.apply(e)
        rho = z.column_dot(e)
        if p is None:
            p = z.data.copy()
        else:
            beta = np.where(rho_prev != 0.0, rho / np.where(rho_prev != 0.0, rho_prev, 1.0), 0.0)
            p = z.data + beta.astype(z.data.dtype)[None, None, :] * p
        pv = VectorBatch(p)
        q = apply(pv)
        gamma = pv.column_dot(q)
        alpha = _step_lengths(rho, gamma, iteration, level)
        e = VectorBatch(e.data - _scale(alpha, q))
        u = VectorBatch(u.data + _scale(alpha, pv))
        rho_prev = rho

    if np.any(~np.isfinite(u.data)):
        raise SolverBreakdownError("non-finite solution", iteration, level)
    logger.debug(f"{level}: {iteration} iterations")
    return u, iteration


class _InnerCapCounter:
    def __init__(self, levels: List[InnerLoopConfig]):
        self.caps = [lvl.max_iter for lvl in levels]
        self.hits = {name: 0 for name in LEVEL_NAMES}

    def record(self, name: str, index: int, iterations: int) -> None:
        if iterations >= self.caps[index]:
            self.hits[name] += 1


def _adaptive_preconditioner(
    hierarchy: MultigridHierarchy, cfg: SolverConfig, report: SolveReport, caps: _InnerCapCounter
) -> Callable[[VectorBatch], VectorBatch]:
    lvl0, lvl1, lvl2 = cfg.levels
    apply0 = _timed_apply(hierarchy.k0_single, report, PHASE_INNER_EBE)
    apply1 = _timed_apply(hierarchy.k1, report, PHASE_P1_EBE)
    apply2 = _timed_apply(hierarchy.a2, report, PHASE_LEVEL2)
    fixed0 = hierarchy.k0.fixed

    def precondition(r: VectorBatch) -> VectorBatch:
        with _stopwatch(report, PHASE_PRECONDITIONER):
            r_bar = VectorBatch(r.data * hierarchy.free0[:, :, None]).astype(Precision.SINGLE)
            u_bar = hierarchy.m0.apply(r_bar)

            r1 = hierarchy.restrict(0, r_bar)
            r2 = hierarchy.restrict(1, r1)
            u2 = hierarchy.restrict(1, hierarchy.restrict(0, u_bar))

            u2, n2 = inner_pcg(hierarchy.a2, hierarchy.m2, r2, u2, lvl2.tol, lvl2.max_iter, "level2", apply2)
            u1, n1 = inner_pcg(
                hierarchy.k1, hierarchy.m1, r1, hierarchy.prolong(1, u2), lvl1.tol, lvl1.max_iter, "level1", apply1
            )
            u_bar, n0 = inner_pcg(
                hierarchy.k0_single, hierarchy.m0, r_bar, hierarchy.prolong(0, u1), lvl0.tol, lvl0.max_iter,
                "level0", apply0,
            )
            for index, (name, count) in enumerate(zip(LEVEL_NAMES, (n0, n1, n2))):
                report.inner_iterations[name] += count
                caps.record(name, index, count)

            z = u_bar.astype(Precision.DOUBLE)
            z.data[fixed0] = r.data[fixed0]
            return z

    return precondition


def _flexible_cg(
    apply_k: Callable[[VectorBatch], VectorBatch],
    precondition: Callable[[VectorBatch], VectorBatch],
    f: VectorBatch,
    u0: VectorBatch,
    cfg: SolverConfig,
    report: SolveReport,
) -> VectorBatch:
    """Outer float64 CG with Polak-Ribiere beta, valid for a preconditioner that varies per iteration."""
    ff = f.column_norm2()
    u = u0.copy()
    r = VectorBatch(f.data - apply_k(u).data)
    p = q_prev = None
    rho_prev = alpha_prev = None
    previous = np.inf
    non_increasing = 0
    iteration = 0
    recorded = -1

    while True:
        ratios = _ratios(r.column_norm2(), ff)
        worst = float(np.max(ratios))
        if not np.isfinite(worst):
            raise SolverBreakdownError("non-finite residual", iteration, "outer")
        if iteration != recorded:
            recorded = iteration
            if iteration % cfg.residual_stride == 0:
                report.residual_history.append((iteration, ratios.copy()))
            if iteration > 0:
                non_increasing += worst <= previous
            previous = worst
        logger.debug(f"outer iteration {iteration}: max relative residual {worst:.6e}")

        if worst <= cfg.outer_tol:
            true_r = VectorBatch(f.data - apply_k(u).data)
            true_ratios = _ratios(true_r.column_norm2(), ff)
            if float(np.max(true_ratios)) <= cfg.outer_tol:
                report.final_residuals = true_ratios
                report.converged = True
                break
            logger.warning(
                f"recurrence residual {worst:.3e} drifted from true residual {float(np.max(true_ratios)):.3e}, restarting"
            )
            r = true_r
            p = None
            continue

        if iteration >= cfg.outer_max_iter:
            report.outer_iterations = iteration
            report.final_residuals = ratios
            raise ConvergenceError(
                f"outer loop did not reach {cfg.outer_tol:g} in {cfg.outer_max_iter} iterations "
                f"(max relative residual {worst:.3e})",
                report,
            )

        iteration += 1
        z = precondition(r)
        rho = z.column_dot(r)
        if p is None:
            p = z.data.copy()
        else:
            # (z, r_k - r_{k-1}) / rho_prev with r_k - r_{k-1} = -alpha_prev q_prev
            zq = z.column_dot(q_prev)
            beta = np.where(rho_prev != 0.0, -alpha_prev * zq / np.where(rho_prev != 0.0, rho_prev, 1.0), 0.0)
            p = z.data + beta[None, None, :] * p
        pv = VectorBatch(p)
        q = apply_k(pv)
        gamma = pv.column_dot(q)
        alpha = _step_lengths(rho, gamma, iteration, "outer")
        r = VectorBatch(r.data - alpha[None, None, :] * q.data)
        u = VectorBatch(u.data + alpha[None, None, :] * p)
        rho_prev, alpha_prev, q_prev = rho, alpha, q

    report.outer_iterations = iteration
    if iteration % cfg.residual_stride != 0:
        report.residual_history.append((iteration, report.final_residuals.copy()))
    report.monotone_fraction = non_increasing / iteration if iteration else 1.0
    if report.monotone_fraction < 0.95:
        logger.warning(f"outer residual was non-monotone in {1.0 - report.monotone_fraction:.1%} of iterations")
    return u


def _prepare(n_nodes: int, f: VectorBatch, u0: Optional[VectorBatch]) -> VectorBatch:
    f.check_shape(n_nodes, Precision.DOUBLE)
    if u0 is None:
        return VectorBatch.zeros(n_nodes, f.batch_size)
    u0.check_shape(n_nodes, Precision.DOUBLE)
    if u0.batch_size != f.batch_size:
        raise DimensionMismatchError(f"u0 has {u0.batch_size} columns, f has {f.batch_size}")
    return u0


def _log_done(report: SolveReport) -> None:
    inner = ", ".join(f"{k}={v}" for k, v in report.inner_iterations.items())
    worst = float(np.max(report.final_residuals)) if report.final_residuals.size else 0.0
    logger.info(
        f"{report.method} solve of {report.batch_size} columns converged in {report.outer_iterations} outer "
        f"iterations ({inner}), max relative residual {worst:.3e}, {report.timings.get(PHASE_TOTAL, 0.0):.3f}s"
    )


def solve(
    hierarchy: MultigridHierarchy,
    f: VectorBatch,
    u0: Optional[VectorBatch] = None,
    cfg: Optional[SolverConfig] = None,
) -> Tuple[VectorBatch, SolveReport]:
    """Solve K u = f for every column of f with the multigrid-preconditioned adaptive CG."""
    cfg = cfg or SolverConfig()
    u0 = _prepare(hierarchy.k0.node_count, f, u0)
    report = SolveReport(method=SolverMethod.ADAPTIVE.value, batch_size=f.batch_size)
    caps = _InnerCapCounter(cfg.levels)
    apply_k = _timed_apply(hierarchy.k0, report, PHASE_OUTER_EBE)
    precondition = _adaptive_preconditioner(hierarchy, cfg, report, caps)

    with _stopwatch(report, PHASE_TOTAL):
        try:
            u = _flexible_cg(apply_k, precondition, f, u0, cfg, report)
        except ConvergenceError:
            logger.error(f"adaptive solve failed after {report.outer_iterations} outer iterations", exc_info=True)
            raise

    for name, hits in caps.hits.items():
        if report.outer_iterations and hits >= max(2, INNER_CAP_WARN_FRACTION * report.outer_iterations):
            logger.warning(f"{name} inner loop hit its iteration cap in {hits} of {report.outer_iterations} calls")
    _log_done(report)
    return u, report


def solve_pcge(
    op: EbeOperator,
    f: VectorBatch,
    u0: Optional[VectorBatch] = None,
    cfg: Optional[SolverConfig] = None,
    jacobi: Optional[BlockJacobi] = None,
) -> Tuple[VectorBatch, SolveReport]:
    """Baseline: float64 CG with a 3x3 block Jacobi preconditioner and EBE matvec."""
    cfg = cfg or SolverConfig()
    if op.precision != Precision.DOUBLE:
        raise DimensionMismatchError("PCGE runs on the float64 operator")
    u0 = _prepare(op.node_count, f, u0)
    report = SolveReport(method=SolverMethod.PCGE.value, batch_size=f.batch_size)
    jacobi = jacobi or extract_block_jacobi(op)
    apply_k = _timed_apply(op, report, PHASE_OUTER_EBE)

    def precondition(r: VectorBatch) -> VectorBatch:
        with _stopwatch(report, PHASE_PRECONDITIONER):
            return jacobi.apply(r)

    with _stopwatch(report, PHASE_TOTAL):
        try:
            u = _flexible_cg(apply_k, precondition, f, u0, cfg, report)
        except ConvergenceError:
            logger.error(f"PCGE solve failed after {report.outer_iterations} iterations", exc_info=True)
            raise
    _log_done(report)
    return u, report


def solve_with_method(
    hierarchy: MultigridHierarchy,
    f: VectorBatch,
    u0: Optional[VectorBatch] = None,
    cfg: Optional[SolverConfig] = None,
) -> Tuple[VectorBatch, SolveReport]:
    cfg = cfg or SolverConfig()
    if cfg.method == SolverMethod.PCGE:
        return solve_pcge(hierarchy.k0, f, u0, cfg, jacobi=extract_block_jacobi(hierarchy.k0))
    return solve(hierarchy, f, u0, cfg)


def solve_in_batches(
    hierarchy: MultigridHierarchy, f: VectorBatch, cfg: Optional[SolverConfig] = None
) -> Tuple[VectorBatch, List[SolveReport]]:
    """Split the columns of f into batches of cfg.batch_size and solve each batch."""
    cfg = cfg or SolverConfig()
    out = np.empty_like(f.data)
    reports = []
    for start in range(0, f.batch_size, cfg.batch_size):
        cols = list(range(start, min(start + cfg.batch_size, f.batch_size)))
        u, report = solve_with_method(hierarchy, f.select(cols), None, cfg)
        out[:, :, cols] = u.data
        reports.append(report)
    return VectorBatch(out), reports


def solve_sequential(
    hierarchy: MultigridHierarchy, f: VectorBatch, cfg: Optional[SolverConfig] = None
) -> Tuple[VectorBatch, List[SolveReport]]:
    """Same solver, one right-hand side at a time, for comparison against batched runs."""
    cfg = cfg or SolverConfig()
    out = np.empty_like(f.data)
    reports = []
    for j in range(f.batch_size):
        u, report = solve_with_method(hierarchy, f.select([j]), None, cfg)
        out[:, :, j] = u.data[:, :, 0]
        reports.append(report)
    total = sum(r.timings.get(PHASE_TOTAL, 0.0) for r in reports)
    logger.info(f"Sequential solve of {f.batch_size} columns took {total:.3f}s")
    return VectorBatch(out), reports
