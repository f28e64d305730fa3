"""Machine-readable summaries and human-readable reports."""

import logging
from typing import Dict, List, Sequence

import numpy as np

from models.fault import FaultPatch
from models.inversion import InversionResult, LCurve
from models.reports import SolveReport
from storage.atomic import atomic_write

logger = logging.getLogger(__name__)


def write_summary(values: Dict[str, object], path: str) -> None:
    with atomic_write(path) as fh:
        for key, value in values.items():
            fh.write(f"{key}={value}\n")


def read_summary(path: str) -> Dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                key, value = line.rstrip("\n").split("=", 1)
                out[key] = value
    return out


def solve_summary(reports: Sequence[SolveReport], prefix: str = "") -> Dict[str, str]:
    """Merge per-batch reports: counts and times summed, residuals concatenated."""
    if len(reports) == 1:
        return {f"{prefix}{k}": v for k, v in reports[0].summary().items()}
    out = {f"{prefix}batches": str(len(reports))}
    for b, report in enumerate(reports):
        out.update({f"{prefix}batch{b}_{k}": v for k, v in report.summary().items()})
    out[f"{prefix}converged"] = str(all(r.converged for r in reports)).lower()
    out[f"{prefix}time_total"] = f"{sum(r.timings.get('total', 0.0) for r in reports):.6f}"
    return out


def write_residual_log(reports: Sequence[SolveReport], path: str) -> None:
    with atomic_write(path) as fh:
        for b, report in enumerate(reports):
            fh.write(f"# batch {b} method {report.method} columns {report.batch_size}\n")
            for line in report.log_lines():
                fh.write(line + "\n")


def lcurve_table(curve: LCurve) -> List[str]:
    lines = [f"{'alpha':>14} {'residual':>14} {'seminorm':>14} {'curvature':>14}"]
    for i, (alpha, res, sem, k) in enumerate(zip(curve.alphas, curve.residual_norms, curve.seminorms, curve.curvature)):
        mark = "  <- selected" if i == curve.best_index else ""
        lines.append(f"{alpha:14.6e} {res:14.6e} {sem:14.6e} {k:14.6e}{mark}")
    return lines


def write_inversion_report(curve: LCurve, result: InversionResult, path: str) -> None:
    with atomic_write(path) as fh:
        fh.write("# L-curve\n")
        for line in lcurve_table(curve):
            fh.write(line + "\n")
        fh.write(f"\nselected_alpha={result.alpha:.6e}\n")
        fh.write(f"residual_norm={result.residual_norm:.6e}\n")
        fh.write(f"seminorm={result.seminorm:.6e}\n")
        fh.write("\n# coefficients\n")
        for i, a in enumerate(result.a):
            fh.write(f"a{i}={a!r}\n")


def write_slip_field(patch: FaultPatch, slip: np.ndarray, path: str) -> None:
    """`node x y z sx sy sz` per fault node."""
    with atomic_write(path) as fh:
        fh.write("# node x y z slip_x slip_y slip_z\n")
        for node, x, s in zip(patch.fault_nodes.tolist(), patch.node_coords.tolist(), slip.tolist()):
            fh.write(f"{node} {x[0]!r} {x[1]!r} {x[2]!r} {s[0]!r} {s[1]!r} {s[2]!r}\n")
