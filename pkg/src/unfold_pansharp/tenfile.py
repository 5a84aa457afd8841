""".ten tensor files: one JSON header line followed by raw little-endian array bytes.

Header: {"shape": [...], "dtype": "f32" | "f64" | ..., "layout": "row-major"}.
"""
import json
import os

import numpy as np

from .errors import DataIOError, VersionError

LAYOUT = "row-major"
_NAMES = {"f32": "<f4", "f64": "<f8", "i32": "<i4", "i64": "<i8", "u8": "|u1", "bool": "|b1"}
_CODES = {v: k for k, v in _NAMES.items()}


def save_ten(path, arr):
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("|", "<") else arr.dtype
    arr = np.asarray(arr, dtype=dt, order="C")
    name = _CODES.get(arr.dtype.str)
    if name is None:
        raise DataIOError(f"save_ten: unsupported dtype {arr.dtype} for {path}")
    header = json.dumps({"shape": list(arr.shape), "dtype": name, "layout": LAYOUT})
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("utf-8") + b"\n")
            fh.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror}") from exc


def load_ten(path):
    try:
        with open(path, "rb") as fh:
            header = fh.readline()
            payload = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        meta = json.loads(header.decode("utf-8"))
        shape = tuple(int(n) for n in meta["shape"])
        name = meta["dtype"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataIOError(f"{path}: malformed .ten header") from exc
    if meta.get("layout", LAYOUT) != LAYOUT:
        raise VersionError(f"{path}: layout {meta['layout']!r} unsupported (expected {LAYOUT})")
    if name not in _NAMES:
        raise VersionError(f"{path}: dtype {name!r} unsupported")
    dtype = np.dtype(_NAMES[name])
    if len(payload) != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
        raise DataIOError(f"{path}: payload has {len(payload)} bytes, header promises shape {shape} {name}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create directory {path}: {exc.strerror}") from exc
    return path
