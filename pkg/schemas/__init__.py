from .config import (
    BoxMeshSpec,
    DirichletPreset,
    InnerLoopConfig,
    InversionConfig,
    RhsConfig,
    RhsSource,
    RunConfig,
    SolverConfig,
    SolverMethod,
)

__all__ = [
    'BoxMeshSpec',
    'DirichletPreset',
    'InnerLoopConfig',
    'InversionConfig',
    'RhsConfig',
    'RhsSource',
    'RunConfig',
    'SolverConfig',
    'SolverMethod',
]
