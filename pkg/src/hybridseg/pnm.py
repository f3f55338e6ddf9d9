"""Binary PGM (P5) and PPM (P6) reading and writing."""
from __future__ import annotations

import numpy as np


class PNMError(ValueError):
    pass


def _tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    out, comments = [], []
    pos = 0
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise PNMError("truncated header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            end = len(data) if end < 0 else end
            comments.append(data[pos + 1:end].decode("ascii", "replace").strip())
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        out.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return out, comments, pos + 1


def read_pnm(path) -> tuple[np.ndarray, int, list[str]]:
    """Returns (array, maxval, comments); array is H,W or H,W,3 of integers."""
    with open(path, "rb") as fh:
        data = fh.read()
    (magic, w, h, maxval), comments, start = _tokens(data, 4)
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"unsupported magic {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise PNMError(f"bad maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * channels
    if len(data) - start < n * dtype.itemsize:
        raise PNMError(f"raster truncated: need {n * dtype.itemsize} bytes after the header")
    raster = np.frombuffer(data, dtype=dtype, count=n, offset=start)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return raster.reshape(shape).astype(np.int64), maxval, comments


def write_pnm(path, array: np.ndarray, maxval: int = 255, comments=()) -> None:
    array = np.asarray(array)
    if array.ndim == 3 and array.shape[2] == 3:
        magic = b"P6"
    elif array.ndim == 2:
        magic = b"P5"
    else:
        raise PNMError(f"cannot write array of shape {array.shape}")
    if array.min(initial=0) < 0 or array.max(initial=0) > maxval:
        raise PNMError(f"values outside [0, {maxval}]")
    h, w = array.shape[:2]
    header = magic + b"\n"
    for c in comments:
        header += b"# " + c.encode("ascii") + b"\n"
    header += f"{w} {h}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def read_segmap(path) -> np.ndarray:
    arr, maxval, _ = read_pnm(path)
    if arr.ndim != 2 or maxval != 255:
        raise PNMError("label maps must be 8-bit P5")
    return arr.astype(np.uint8)


def write_segmap(path, labels: np.ndarray) -> None:
    write_pnm(path, np.asarray(labels, dtype=np.uint8), 255)
