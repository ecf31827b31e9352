# planemorph/io/jsonio.py
"""
Deterministic JSON and CSV writers.

Keys are sorted and indentation fixed so that re-running a command produces
byte-identical files. Writes go through a temp file and ``os.replace``.
"""
import json
import logging
import os
import tempfile
from typing import Any

import pandas as pd

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.6f"


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def atomic_write_bytes(path: str, blob: bytes) -> None:
    """Writes `blob` to `path` atomically (temp file in the same directory, then rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp_", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_json(path: str, obj: Any) -> None:
    atomic_write_bytes(path, dumps_json(obj).encode("utf-8"))
    logger.debug("Wrote JSON '%s'.", path)


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path: str, df: pd.DataFrame) -> None:
    """Writes a table with 6-decimal floats and 'nan' for missing values."""
    text = df.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
    atomic_write_bytes(path, text.encode("utf-8"))
    logger.debug("Wrote CSV '%s' (%d rows).", path, len(df))
