"""Binary vector batches behind an 8-line text header, data little-endian float64 in (node, axis, batch) order."""

import logging

import numpy as np

from core.exceptions import FileFormatError
from models.vectors import VectorBatch
from storage.atomic import atomic_write
from storage.reader import TokenReader

logger = logging.getLogger(__name__)

MAGIC = "TSVEC"
HEADER_LINES = 8


def write_vectors(u: VectorBatch, path: str) -> None:
    header = (
        f"{MAGIC} 1\n"
        f"nodes {u.n_nodes}\n"
        "components 3\n"
        f"batch {u.batch_size}\n"
        "precision float64\n"
        "endian little\n"
        "layout node,axis,batch\n"
        "end\n"
    )
    with atomic_write(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(u.data, dtype="<f8").tobytes())
    logger.info(f"Wrote {u.batch_size} vectors of {u.n_nodes} nodes to {path}")


def _count(reader: TokenReader, key: str) -> int:
    fields = reader.keyword(key)
    if len(fields) != 1:
        raise reader.fail(f"expected '{key} <count>'")
    value = reader.convert(fields[0], int, key)
    if value < 0:
        raise reader.fail(f"negative {key} {value}")
    return value


def read_vectors(path: str) -> VectorBatch:
    try:
        with open(path, "rb") as fh:
            header = [fh.readline().decode("ascii", errors="replace") for _ in range(HEADER_LINES)]
            payload = fh.read()
    except OSError as e:
        raise FileFormatError(f"cannot read file: {e.strerror}", path) from e

    reader = TokenReader(header, path)
    reader.keyword(MAGIC, "1")
    n = _count(reader, "nodes")
    reader.keyword("components", "3")
    b = _count(reader, "batch")
    reader.keyword("precision", "float64")
    reader.keyword("endian", "little")
    reader.keyword("layout", "node,axis,batch")
    reader.keyword("end")

    expected = 8 * 3 * n * b
    if len(payload) != expected:
        raise FileFormatError(f"expected {expected} data bytes, found {len(payload)}", path)
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(n, 3, b)
    return VectorBatch(data)
