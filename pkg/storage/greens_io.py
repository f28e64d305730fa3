"""
Green's bank file: text header then the (m, n) matrix as little-endian float64, row-major.

    TSGREENS 1
    rows m cols n
    row x y z axis             (m lines)
    col cx cy cz direction radius   (n lines)
    end
"""

import logging

import numpy as np

from core.exceptions import FileFormatError
from models.fault import Axis, GreensBank, ObservationComponent, SlipDirection
from storage.atomic import atomic_write
from storage.reader import TokenReader

logger = logging.getLogger(__name__)

MAGIC = "TSGREENS"


def write_greens(bank: GreensBank, path: str) -> None:
    m, n = bank.shape
    lines = [f"{MAGIC} 1", f"rows {m} cols {n}"]
    for row in bank.rows:
        x, y, z = row.point
        lines.append(f"row {x!r} {y!r} {z!r} {row.axis.value}")
    for (cx, cy, cz), direction, radius in bank.columns:
        lines.append(f"col {cx!r} {cy!r} {cz!r} {SlipDirection(direction).value} {radius!r}")
    lines.append("end")
    with atomic_write(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(bank.matrix, dtype="<f8").tobytes())
    logger.info(f"Wrote Green's bank {m}x{n} to {path}")


def read_greens(path: str) -> GreensBank:
    try:
        with open(path, "rb") as fh:
            header = []
            while True:
                raw = fh.readline()
                if not raw:
                    raise FileFormatError("header is not terminated by 'end'", path, len(header))
                header.append(raw.decode("ascii", errors="replace"))
                if raw.strip() == b"end":
                    break
            payload = fh.read()
    except OSError as e:
        raise FileFormatError(f"cannot read file: {e.strerror}", path) from e

    reader = TokenReader(header, path)
    reader.keyword(MAGIC, "1")
    sizes = reader.next(4, "size line")
    if sizes[0] != "rows" or sizes[2] != "cols":
        raise reader.fail("expected 'rows m cols n'")
    m = reader.convert(sizes[1], int, "row count")
    n = reader.convert(sizes[3], int, "column count")

    rows = []
    for _ in range(m):
        fields = reader.keyword("row")
        if len(fields) != 4:
            raise reader.fail("expected 'row x y z axis'")
        point = tuple(reader.convert(s, float, "coordinate") for s in fields[:3])
        axis = reader.convert(fields[3], Axis, "axis")
        rows.append(ObservationComponent(point=point, axis=axis))
    columns = []
    for _ in range(n):
        fields = reader.keyword("col")
        if len(fields) != 5:
            raise reader.fail("expected 'col cx cy cz direction radius'")
        center = tuple(reader.convert(s, float, "coordinate") for s in fields[:3])
        direction = reader.convert(fields[3], SlipDirection, "slip direction")
        radius = reader.convert(fields[4], float, "radius")
        columns.append((center, direction, radius))
    reader.keyword("end")

    if len(payload) != 8 * m * n:
        raise FileFormatError(f"expected {8 * m * n} data bytes, found {len(payload)}", path)
    matrix = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(m, n)
    return GreensBank(matrix=matrix, rows=rows, columns=columns)
