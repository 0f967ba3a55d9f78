"""
Utility functions for the entityprobes library.

Includes seeded RNG derivation, atomic file output and the tab-separated
row reader shared by every ingest routine.
"""

import hashlib
import logging
import math
import os
import re
import tempfile
from pathlib import Path
from typing import Dict, Iterator, List, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]


def derive_seed(master_seed: int, key: str) -> int:
    """
    Derive a 64-bit seed for one named random stream.

    Args:
        master_seed: Run-level seed
        key: Stream name (usually a task id such as "R-I:birthPlace")

    Returns:
        Unsigned 64-bit integer seed
    """
    digest = hashlib.sha256(f"{int(master_seed)}\x1f{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(master_seed: int, key: str) -> np.random.Generator:
    """Create the numpy Generator for the stream named `key`."""
    return np.random.default_rng(derive_seed(master_seed, key))


def iter_tsv(path: PathLike) -> Iterator[Tuple[int, List[str]]]:
    """
    Iterate over the rows of a UTF-8, LF, tab-separated file.

    Blank lines are skipped. Line numbers are 1-based.

    Args:
        path: File to read

    Yields:
        (line_number, fields) tuples
    """
    with open(path, "r", encoding="utf-8", newline="\n") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if line.endswith("\r"):
                line = line[:-1]
            if not line.strip():
                continue
            yield line_number, line.split("\t")


def format_float(value: float) -> str:
    """
    Format a float as the shortest decimal that round-trips.

    Integral values keep a trailing ".0" so the column type stays obvious.
    """
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"Cannot format non-finite value {value!r}")
    return repr(value)


def atomic_write(path: PathLike, content: Union[str, bytes]) -> Path:
    """
    Write a file atomically (write to a temp file, then rename).

    Args:
        path: Destination path; parent directories are created
        content: Text (written as UTF-8 with LF) or bytes

    Returns:
        Destination as a Path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = content.encode("utf-8") if isinstance(content, str) else content
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sanitize_task_id(task_id: str) -> str:
    """
    Turn a task id into a safe file stem.

    "R-I:birthPlace" -> "R-I__birthPlace", "F-A+T" -> "F-A+T".

    Args:
        task_id: Task identifier

    Returns:
        File stem containing only letters, digits, '-', '+', '_' and '.'
    """
    stem = task_id.replace(":", "__")
    stem = re.sub(r"[^A-Za-z0-9_.+-]", "_", stem)
    return stem.strip(".") or "task"


def hashed_stem(task_id: str) -> str:
    """File stem of `task_id` with a short digest of the raw id, for ids whose plain stems collide."""
    digest = hashlib.sha256(task_id.encode("utf-8")).hexdigest()[:8]
    return f"{sanitize_task_id(task_id)}-{digest}"


def warn_counts(log: logging.Logger, context: str, counts: Dict[str, int]) -> None:
    """Log one WARNING line per non-zero counter."""
    for name, count in sorted(counts.items()):
        if count:
            log.warning("%s: %s=%d", context, name, count)
