"""Fault definition files and observation lists."""

import logging
from typing import List, Sequence

import numpy as np

from core.exceptions import FileFormatError
from models.fault import Axis, FaultDefinition, ObservationComponent
from storage.atomic import atomic_write
from storage.reader import TokenReader

logger = logging.getLogger(__name__)

MAGIC = "TSFAULT"


def read_fault(path: str) -> FaultDefinition:
    """
    TSFAULT 1
    angles strike_deg dip_deg        (optional)
    faces F
    a b c                            (F lines)
    centers C radius R
    x y z                            (C lines)
    """
    reader = TokenReader.open(path)
    reader.keyword(MAGIC, "1")
    angles = None
    tokens = reader.next(what="faces")
    if tokens[0] == "angles":
        if len(tokens) != 3:
            raise reader.fail("expected 'angles strike_deg dip_deg'")
        angles = (reader.convert(tokens[1], float, "strike"), reader.convert(tokens[2], float, "dip"))
        tokens = reader.next(what="faces")
    if tokens[0] != "faces" or len(tokens) != 2:
        raise reader.fail("expected 'faces F'")
    n_faces = reader.convert(tokens[1], int, "face count")
    if n_faces < 1:
        raise reader.fail("a fault needs at least one face")
    faces = np.array(
        [[reader.convert(s, int, "node id") for s in reader.next(3, "fault face")] for _ in range(n_faces)],
        dtype=np.int64,
    )

    tokens = reader.next(4, "centers line")
    if tokens[0] != "centers" or tokens[2] != "radius":
        raise reader.fail("expected 'centers C radius R'")
    n_centers = reader.convert(tokens[1], int, "center count")
    radius = reader.convert(tokens[3], float, "radius")
    if n_centers < 1 or radius <= 0.0:
        raise reader.fail(f"need at least one center and a positive radius, got {n_centers}, {radius}")
    centers = np.array(
        [[reader.convert(s, float, "coordinate") for s in reader.next(3, "center")] for _ in range(n_centers)]
    )
    if not reader.at_end():
        raise reader.fail("trailing records after the last center", reader.line)
    logger.info(f"Read fault {path}: {n_faces} faces, {n_centers} unit-slip centers, radius {radius:g}")
    return FaultDefinition(faces=faces, centers=centers, radius=radius, angles=angles)


def write_fault(fault: FaultDefinition, path: str) -> None:
    with atomic_write(path) as fh:
        fh.write(f"{MAGIC} 1\n")
        if fault.angles is not None:
            fh.write(f"angles {fault.angles[0]!r} {fault.angles[1]!r}\n")
        fh.write(f"faces {len(fault.faces)}\n")
        for a, b, c in fault.faces.tolist():
            fh.write(f"{a} {b} {c}\n")
        fh.write(f"centers {len(fault.centers)} radius {fault.radius!r}\n")
        for x, y, z in fault.centers.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


def read_observations(path: str, require_values: bool = False) -> List[ObservationComponent]:
    """`x y z axis [value]` per line."""
    reader = TokenReader.open(path)
    out = []
    while not reader.at_end():
        tokens = reader.next(what="observation")
        if len(tokens) not in (4, 5):
            raise reader.fail(f"expected 'x y z axis [value]', found {len(tokens)} fields")
        point = tuple(reader.convert(s, float, "coordinate") for s in tokens[:3])
        axis = reader.convert(tokens[3], Axis, "axis")
        if len(tokens) == 5:
            value = reader.convert(tokens[4], float, "value")
        elif require_values:
            raise reader.fail("observation has no measured value")
        else:
            value = float("nan")
        out.append(ObservationComponent(point=point, axis=axis, value=value))
    if not out:
        raise FileFormatError("no observations defined", path)
    return out


def write_observations(observations: Sequence[ObservationComponent], path: str) -> None:
    with atomic_write(path) as fh:
        for obs in observations:
            x, y, z = obs.point
            line = f"{x!r} {y!r} {z!r} {obs.axis.value}"
            if not np.isnan(obs.value):
                line += f" {obs.value!r}"
            fh.write(line + "\n")
