from contextlib import contextmanager
import logging
import os
import tempfile

logger = logging.getLogger(__name__)


@contextmanager
def atomic_write(path: str, mode: str = "w"):
    """Write to a temp file next to `path`; rename over it on success, discard it on error."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    handle = os.fdopen(fd, mode)
    try:
        yield handle
        handle.flush()
        os.fsync(handle.fileno())
        handle.close()
        os.replace(tmp, path)
        logger.debug(f"Wrote {path}")
    except Exception:
        handle.close()
        if os.path.exists(tmp):
            os.remove(tmp)
        logger.error(f"Failed to write {path}, partial output discarded")
        raise
