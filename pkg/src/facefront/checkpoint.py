"""Deterministic checkpoint archives.

A checkpoint is a ZIP file holding one ``.npy`` entry per named array plus
a ``meta.json`` entry.  Entries are stored uncompressed, sorted by name,
with fixed timestamps, so identical state always produces identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import CheckpointError

META_ENTRY = "meta.json"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def write_archive(path, arrays: dict, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED, allowZip64=True) as zf:
        info = zipfile.ZipInfo(META_ENTRY, date_time=_EPOCH)
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=1))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(
                buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            zf.writestr(info, buf.getvalue())
    return path


def read_archive(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    arrays, meta = {}, None
    try:
        with zipfile.ZipFile(path, "r") as zf:
            for name in zf.namelist():
                with zf.open(name) as fh:
                    if name == META_ENTRY:
                        meta = json.loads(fh.read().decode("utf-8"))
                    elif name.endswith(".npy"):
                        arrays[name[:-4]] = np.lib.format.read_array(
                            io.BytesIO(fh.read()), allow_pickle=False)
    except (zipfile.BadZipFile, ValueError, KeyError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e
    if meta is None:
        raise CheckpointError(f"checkpoint {path} has no {META_ENTRY}")
    return arrays, meta


def require_version(meta: dict, expected: int, path) -> None:
    got = meta.get("format_version")
    if got != expected:
        raise CheckpointError(
            f"checkpoint {path}: format_version {got} not supported (expected {expected})"
        )
