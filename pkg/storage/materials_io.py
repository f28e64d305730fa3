import logging
from typing import List, Sequence

from core.exceptions import FileFormatError, ValidationError
from models.material import Material
from services.elasticity import material_from_wavespeeds
from storage.atomic import atomic_write
from storage.reader import TokenReader

logger = logging.getLogger(__name__)


def read_materials(path: str) -> List[Material]:
    """`vp vs rho` per line, material id = line order (0 = surface layer)."""
    reader = TokenReader.open(path)
    materials = []
    while not reader.at_end():
        line = reader.line
        vp, vs, rho = (reader.convert(s, float, "material value") for s in reader.next(3, "material"))
        try:
            materials.append(material_from_wavespeeds(vp, vs, rho))
        except ValidationError as e:
            raise FileFormatError(str(e), path, line) from e
    if not materials:
        raise FileFormatError("no materials defined", path)
    logger.info(f"Read {len(materials)} materials from {path}")
    return materials


def write_materials(materials: Sequence[Material], path: str) -> None:
    with atomic_write(path) as fh:
        fh.write("# vp vs rho\n")
        for m in materials:
            fh.write(f"{m.vp!r} {m.vs!r} {m.rho!r}\n")
