"""Artifact persistence: deterministic array archives, key-value files, tables.

``np.savez`` stamps the wall-clock time into every zip member, so two
identical runs would produce different bytes. ``save_archive`` writes the same
``.npz`` layout with a fixed timestamp and a ``__meta__.json`` member.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import zipfile
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)
_META = "__meta__.json"


def _dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def save_archive(path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo(_META, date_time=_FIXED_DATE)
        zf.writestr(info, _dumps(dict(meta)))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_FIXED_DATE), buf.getvalue())
    return path


def load_archive(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    with zipfile.ZipFile(path) as zf:
        names = zf.namelist()
        if _META not in names:
            raise DataError(f"{path} is not a sepsisrl archive (no {_META})")
        meta = json.loads(zf.read(_META))
        for name in names:
            if name == _META:
                continue
            with zf.open(name) as fh:
                arrays[name[: -len(".npy")]] = np.lib.format.read_array(io.BytesIO(fh.read()),
                                                                        allow_pickle=False)
    return arrays, meta


def save_json(path, obj: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dumps(obj))
    return path


def load_json(path) -> dict[str, Any]:
    return json.loads(Path(path).read_text())


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence[Any]], delimiter: str = ",") -> Path:
    """Write a delimiter-separated table with a header row. Floats use ``repr``
    so a reload gives back the exact same value."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def read_table(path, delimiter: str = ",") -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader)
        return header, [row for row in reader]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
