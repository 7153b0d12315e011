# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

import hashlib
import json
import logging
import os
from os import PathLike
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import numpy as np
from joblib import cpu_count

logger = logging.getLogger(__name__)

NM_PER_UM = 1_000
NM_PER_MM = 1_000_000

THREADS_VARIABLE = "QFLOW_THREADS"


def resolve_n_jobs(n_jobs: Optional[int] = None) -> int:
    """Number of workers to use.

    Parameters
    ----------
    n_jobs :
        Requested workers. `None` means 1, `-1` means every CPU.

    Returns
    -------
    n_jobs :
        The requested count, capped by the `QFLOW_THREADS` environment variable when
        it is set to a positive integer.

    """
    n = 1 if n_jobs is None else int(n_jobs)
    if n < 0:
        n = max(1, cpu_count() + 1 + n)
    n = max(1, n)
    cap = os.environ.get(THREADS_VARIABLE)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            logger.warning("Ignoring %s=%r, expected an integer.", THREADS_VARIABLE, cap)
    return n


def um_to_nm(value: Union[float, np.ndarray]) -> Union[int, np.ndarray]:
    """Micrometers to integer nanometers (rounded to the nearest nm)."""
    if isinstance(value, np.ndarray):
        return np.rint(value * NM_PER_UM).astype(np.int64)
    return int(round(value * NM_PER_UM))


def mm_to_nm(value: float) -> int:
    return int(round(value * NM_PER_MM))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Union[str, PathLike]) -> str:
    """Hex SHA-256 digest of a file, read in 1 MiB blocks."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def sha256_lines(lines: Iterable[str]) -> str:
    """Digest of a multiset of text lines, independent of their order."""
    digest = hashlib.sha256()
    for line in sorted(lines):
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def to_json(data: Any) -> str:
    """Deterministic JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True, default=_default) + "\n"


def dump_json(data: Any, path: Union[str, PathLike]) -> Path:
    path = Path(path)
    path.write_text(to_json(data), encoding="utf-8")
    return path


def _default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "model_dump"):
        return obj.model_dump(mode="json")
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable.")
