from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np


LEVEL_NAMES = ("level0", "level1", "level2")


@dataclass
class SolveReport:
    method: str
    batch_size: int
    outer_iterations: int = 0
    inner_iterations: Dict[str, int] = field(default_factory=lambda: {name: 0 for name in LEVEL_NAMES})
    final_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residual_history: List[Tuple[int, np.ndarray]] = field(default_factory=list)  # (outer iteration, ratios)
    timings: Dict[str, float] = field(default_factory=dict)
    converged: bool = False
    monotone_fraction: float = 1.0

    def add_time(self, phase: str, seconds: float) -> None:
        self.timings[phase] = self.timings.get(phase, 0.0) + seconds

    def summary(self) -> Dict[str, str]:
        """Flat key=value view for the machine-readable summary."""
        out = {
            "method": self.method,
            "batch_size": str(self.batch_size),
            "converged": str(self.converged).lower(),
            "outer_iterations": str(self.outer_iterations),
        }
        for name, count in self.inner_iterations.items():
            out[f"inner_iterations_{name}"] = str(count)
        if self.final_residuals.size:
            out["max_relative_residual"] = f"{float(np.max(self.final_residuals)):.6e}"
        for j, value in enumerate(self.final_residuals):
            out[f"relative_residual_col{j}"] = f"{float(value):.6e}"
        for phase, seconds in sorted(self.timings.items()):
            out[f"time_{phase}"] = f"{seconds:.6f}"
        if "total" in self.timings and self.batch_size:
            out["time_per_vector"] = f"{self.timings['total'] / self.batch_size:.6f}"
        out["monotone_fraction"] = f"{self.monotone_fraction:.4f}"
        return out

    def log_lines(self) -> List[str]:
        """One line per recorded outer iteration; the solver already applied the stride."""
        lines = []
        for iteration, residuals in self.residual_history:
            values = " ".join(f"{float(r):.6e}" for r in residuals)
            lines.append(f"iter {iteration} max {float(np.max(residuals)):.6e} cols {values}")
        return lines
