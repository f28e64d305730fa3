from .mesh import LOCAL_EDGES, LOCAL_FACES, LinearMeshView, Mesh
from .material import Material
from .vectors import Precision, VectorBatch
from .operators import BlockCsrMatrix, BlockJacobi
from .fault import Axis, FaultDefinition, FaultPatch, GreensBank, ObservationComponent, SlipDirection, UnitSlip
from .reports import SolveReport
from .inversion import InversionProblem, InversionResult, LCurve

__all__ = [
    'LOCAL_EDGES',
    'LOCAL_FACES',
    'LinearMeshView',
    'Mesh',
    'Material',
    'Precision',
    'VectorBatch',
    'BlockCsrMatrix',
    'BlockJacobi',
    'Axis',
    'FaultDefinition',
    'FaultPatch',
    'GreensBank',
    'ObservationComponent',
    'SlipDirection',
    'UnitSlip',
    'SolveReport',
    'InversionProblem',
    'InversionResult',
    'LCurve',
]
