"""Exception hierarchy. Every error carries the CLI exit code it maps to."""

from typing import Optional


class TetraSolveError(Exception):
    exit_code = 4


class ValidationError(TetraSolveError):
    exit_code = 2


class FileFormatError(ValidationError):
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class MeshFormatError(FileFormatError):
    pass


class DegenerateElementError(ValidationError):
    def __init__(self, element: int, volume: float):
        super().__init__(f"element {element} has non-positive volume {volume:.6e}")
        self.element = element
        self.volume = volume


class DimensionMismatchError(TetraSolveError):
    pass


class SingularBlockError(TetraSolveError):
    def __init__(self, node: int):
        super().__init__(f"3x3 diagonal block of node {node} is singular")
        self.node = node


class SolverBreakdownError(TetraSolveError):
    def __init__(self, message: str, iteration: int, level: str):
        super().__init__(f"{level}: {message} at iteration {iteration}")
        self.iteration = iteration
        self.level = level


class ConvergenceError(TetraSolveError):
    exit_code = 3

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class FaultGeometryError(ValidationError):
    pass


class ObservationOutsideMeshError(ValidationError):
    def __init__(self, point):
        super().__init__(f"observation point {tuple(float(c) for c in point)} lies outside the mesh")
        self.point = point


class SingularNormalMatrixError(TetraSolveError):
    def __init__(self, alpha: float):
        super().__init__(
            f"normal matrix is singular at alpha={alpha:g}; use a larger regularization weight"
        )
        self.alpha = alpha


class DegenerateLCurveError(TetraSolveError):
    pass
