"""Report serialization: deterministic JSON, CSV tables, hashes and atomic writes"""

import csv
import io
import json
import math
import os
import tempfile
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from prefect.logging import get_logger
from prefect.utilities.hashing import file_hash, hash_objects

from prefect_roe_lab.exceptions import DomainError

logger = get_logger(__name__)

INFINITY = "inf"


def encode_complex(array: np.ndarray) -> List[Any]:
    """
    Encodes a complex array as nested lists whose leaves are `[re, im]` pairs.
    """
    array = np.asarray(array, dtype=complex)
    return np.stack([array.real, array.imag], axis=-1).tolist()


def decode_complex(data: Any) -> np.ndarray:
    """
    Inverse of `encode_complex`.

    Raises:
        DomainError: If the leaves are not `[re, im]` pairs.
    """
    pairs = np.asarray(data, dtype=float)
    if pairs.ndim == 0 or pairs.shape[-1] != 2:
        raise DomainError(
            f"Complex values are written as [re, im] pairs, got shape {pairs.shape}"
        )
    return pairs[..., 0] + 1j * pairs[..., 1]


def to_jsonable(value: Any) -> Any:
    """
    Converts numpy values, enums, models with `to_json` and non-finite floats
    into plain JSON values. Infinity is written as the sentinel `"inf"`.
    """
    if hasattr(value, "to_json") and callable(value.to_json):
        return to_jsonable(value.to_json())
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple, range)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            return encode_complex(value)
        return to_jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return [to_jsonable(value.real), to_jsonable(value.imag)]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return INFINITY if value > 0 else f"-{INFINITY}"
        if math.isnan(value):
            raise DomainError("Reports cannot contain NaN values.")
        return value
    if value is None or isinstance(value, str):
        return value
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Cannot serialize {type(value).__name__} into a report.")


def dump_json(payload: Any) -> str:
    """
    Serializes a report deterministically: sorted keys, two-space indentation
    and the shortest round-trip representation of every float.

    Examples:
        ```python
        from prefect_roe_lab.reports import dump_json

        dump_json({"b": 1.0, "a": float("inf")})
        ```
    """
    return json.dumps(to_jsonable(payload), sort_keys=True, indent=2, allow_nan=False)


def rows_to_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """
    Writes a flat table as CSV with `\\n` line endings.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_csv_cell(cell) for cell in row])
    return buffer.getvalue()


def _csv_cell(cell: Any) -> Any:
    cell = to_jsonable(cell)
    if isinstance(cell, list):
        return " ".join(str(item) for item in cell)
    return cell


def write_atomic(path: Union[str, Path], text: str) -> Path:
    """
    Writes `text` to `path` through a temporary file in the same directory,
    so readers never observe a partially written report.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    descriptor, temporary = tempfile.mkstemp(
        dir=path.parent, prefix=f".{path.name}.", suffix=".tmp"
    )
    try:
        with os.fdopen(descriptor, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.unlink(temporary)
        raise
    logger.info(f"Wrote report to {str(path)!r}")
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Reads a JSON artifact.

    Raises:
        DomainError: If the file does not hold valid JSON.
    """
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise DomainError(f"{str(path)!r} is not valid JSON: {exc}") from exc


def input_hash(path: Union[str, Path]) -> str:
    """
    Hash of an input artifact, recorded in reports.
    """
    return file_hash(str(path))


def parameter_hash(**parameters: Any) -> Optional[str]:
    """
    Hash of the parameters of a run, recorded in reports.
    """
    return hash_objects(to_jsonable(parameters))
