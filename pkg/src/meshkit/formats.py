"""Header-plus-blob files: one JSON line, then raw little-endian float32 (x fastest).

Used for ``.sdfgrid``, ``.chan``, ``.desc`` and ``.tsdfsamples``. Grids are
stored x-fastest; record tables (``layout="rows"``) are stored row by row.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import IoError, MalformedFile

_ALIGN = 16


def encode_blob(header: dict, array: np.ndarray, layout: str = "grid") -> bytes:
    arr = np.ascontiguousarray(array, dtype="<f4")
    head = dict(header)
    head["dtype"] = "float32le"
    head["shape"] = list(arr.shape)
    head["layout"] = layout
    text = json.dumps(head, sort_keys=True, separators=(",", ":"))
    # pad so the payload starts on a 16-byte boundary (header line + newline)
    pad = (-(len(text.encode()) + 1)) % _ALIGN
    line = (text + " " * pad + "\n").encode()
    if layout == "rows":
        return line + arr.tobytes()
    # arrays are indexed [x, y, z, ...]; reversing the axes makes x vary fastest
    return line + _to_x_fastest(arr).tobytes()


def _to_x_fastest(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr.transpose(tuple(reversed(range(arr.ndim)))))


def decode_blob(data: bytes) -> tuple[dict, np.ndarray]:
    nl = data.find(b"\n")
    if nl < 0:
        raise MalformedFile("missing header line", len(data))
    try:
        header = json.loads(data[:nl].decode("utf-8"))
        shape = tuple(int(s) for s in header["shape"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise MalformedFile(f"bad header: {exc}", 0) from None
    if header.get("dtype") != "float32le" or any(s < 0 for s in shape):
        raise MalformedFile("unsupported header", 0)
    n = int(np.prod(shape)) if shape else 1
    payload = data[nl + 1:]
    if len(payload) != 4 * n:
        raise MalformedFile(f"expected {4 * n} payload bytes, found {len(payload)}", nl + 1)
    flat = np.frombuffer(payload, dtype="<f4")
    if header.get("layout") == "rows":
        arr = flat.reshape(shape)
    else:
        arr = flat.reshape(tuple(reversed(shape))).transpose(tuple(reversed(range(len(shape)))))
    return header, np.ascontiguousarray(arr).astype(np.float32)


def write_blob(path, header: dict, array: np.ndarray, layout: str = "grid") -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        tmp.write_bytes(encode_blob(header, array, layout))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_blob(path) -> tuple[dict, np.ndarray]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return decode_blob(data)
