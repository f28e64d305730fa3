from typing import List, Optional, Tuple
import enum

from pydantic import BaseModel, Field, field_validator, model_validator


class DirichletPreset(str, enum.Enum):
    ROLLER_SIDES = "roller_sides"     # bottom fixed, sides fixed in their normal direction, top free
    CLAMPED_SIDES = "clamped_sides"   # bottom and sides fixed in all directions
    BOTTOM_ONLY = "bottom_only"       # bottom fixed, everything else free


class SolverMethod(str, enum.Enum):
    ADAPTIVE = "adaptive"
    PCGE = "pcge"


class BoxMeshSpec(BaseModel):
    extents: Tuple[float, float, float]
    divisions: Tuple[int, int, int]
    layer_interfaces: List[float] = Field(default_factory=list)
    fixed_boundary: DirichletPreset = DirichletPreset.ROLLER_SIDES

    @field_validator("extents")
    @classmethod
    def extents_positive(cls, v):
        if any(length <= 0.0 for length in v):
            raise ValueError(f"extents must be positive, got {v}")
        return v

    @field_validator("divisions")
    @classmethod
    def divisions_positive(cls, v):
        if any(n < 1 for n in v):
            raise ValueError(f"divisions must be >= 1 in each axis, got {v}")
        return v

    @model_validator(mode="after")
    def interfaces_inside(self):
        lz = self.extents[2]
        z = self.layer_interfaces
        if any(b <= a for a, b in zip(z, z[1:])):
            raise ValueError(f"layer interfaces must be strictly increasing, got {z}")
        if any(not (0.0 < zi < lz) for zi in z):
            raise ValueError(f"layer interfaces must lie strictly inside (0, {lz}), got {z}")
        return self


class InnerLoopConfig(BaseModel):
    tol: float
    max_iter: int

    @field_validator("tol")
    @classmethod
    def tol_in_unit_interval(cls, v):
        if not (0.0 < v < 1.0):
            raise ValueError(f"tolerance must lie in (0, 1), got {v}")
        return v

    @field_validator("max_iter")
    @classmethod
    def max_iter_positive(cls, v):
        if v < 1:
            raise ValueError(f"maximum iterations must be >= 1, got {v}")
        return v


def default_levels() -> List[InnerLoopConfig]:
    return [
        InnerLoopConfig(tol=0.1, max_iter=30),
        InnerLoopConfig(tol=0.05, max_iter=300),
        InnerLoopConfig(tol=0.025, max_iter=3000),
    ]


class SolverConfig(BaseModel):
    """Outer tolerance, per-level inner loop settings and batching."""

    outer_tol: float = 1e-8
    outer_max_iter: int = 5000
    levels: List[InnerLoopConfig] = Field(default_factory=default_levels)
    batch_size: int = 16
    aggregate_size: int = 8
    residual_stride: int = 1
    workers: int = 1
    method: SolverMethod = SolverMethod.ADAPTIVE

    @field_validator("outer_tol")
    @classmethod
    def outer_tol_in_unit_interval(cls, v):
        if not (0.0 < v < 1.0):
            raise ValueError(f"outer tolerance must lie in (0, 1), got {v}")
        return v

    @field_validator("outer_max_iter", "batch_size", "residual_stride", "workers")
    @classmethod
    def at_least_one(cls, v):
        if v < 1:
            raise ValueError(f"value must be >= 1, got {v}")
        return v

    @field_validator("aggregate_size")
    @classmethod
    def aggregate_size_at_least_two(cls, v):
        if v < 2:
            raise ValueError(f"aggregate size must be >= 2, got {v}")
        return v

    @field_validator("levels")
    @classmethod
    def three_levels(cls, v):
        if len(v) != 3:
            raise ValueError(f"exactly three inner loop levels are required, got {len(v)}")
        return v


class RhsSource(str, enum.Enum):
    MANUFACTURED = "manufactured"
    SURFACE_LOAD = "surface_load"
    FILE = "file"


class RhsConfig(BaseModel):
    source: RhsSource = RhsSource.MANUFACTURED
    path: Optional[str] = None
    columns: int = 1
    load: float = -1.0e6

    @field_validator("columns")
    @classmethod
    def columns_positive(cls, v):
        if v < 1:
            raise ValueError(f"columns must be >= 1, got {v}")
        return v

    @model_validator(mode="after")
    def path_for_file_source(self):
        if self.source == RhsSource.FILE and not self.path:
            raise ValueError("rhs source 'file' requires a path")
        return self


class InversionConfig(BaseModel):
    alpha_min: float = 1e-4
    alpha_max: float = 1e4
    alpha_count: int = 17
    noise: float = 0.0

    @model_validator(mode="after")
    def grid_valid(self):
        if self.alpha_count < 5:
            raise ValueError(f"the alpha grid needs at least 5 points, got {self.alpha_count}")
        if not (0.0 < self.alpha_min < self.alpha_max):
            raise ValueError(
                f"alpha grid bounds must satisfy 0 < alpha_min < alpha_max, got "
                f"({self.alpha_min}, {self.alpha_max})"
            )
        return self


class RunConfig(BaseModel):
    """Everything one CLI command needs, after merging flags, config file and settings."""

    mesh: Optional[BoxMeshSpec] = None
    mesh_path: Optional[str] = None
    materials_path: Optional[str] = None
    solver: SolverConfig = Field(default_factory=SolverConfig)
    rhs: RhsConfig = Field(default_factory=RhsConfig)
    fault_path: Optional[str] = None
    observations_path: Optional[str] = None
    greens_path: Optional[str] = None
    planted_slip: List[float] = Field(default_factory=list)
    inversion: InversionConfig = Field(default_factory=InversionConfig)
    output_dir: str = "out"
    seed: int = 0
    export_vtk: bool = False
    compare_single: bool = False
