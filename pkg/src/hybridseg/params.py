"""Parameter storage, the STNR tensor container, and seeded initialization.

STNR layout::

    STNR1\\n
    dtype=f64 dims=d0,d1,...\\n
    <little-endian float64 payload, row-major>

A ParamStore archive is ``PSTORE1\\n count=K\\n`` followed by K records of
``name=<path>\\n`` + one STNR blob, in lexicographic path order.
"""
from __future__ import annotations

import io
import re
from collections.abc import MutableMapping
from typing import BinaryIO, Iterator

import numpy as np

from .tensor import Tensor

STNR_MAGIC = b"STNR1\n"
STORE_MAGIC = b"PSTORE1\n"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1
_PATH_RE = re.compile(r"[A-Za-z0-9_]+(\.[A-Za-z0-9_]+)*")


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# STNR
# ---------------------------------------------------------------------------

def write_stnr(stream: BinaryIO, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
    dims = ",".join(str(d) for d in arr.shape)
    stream.write(STNR_MAGIC)
    stream.write(f"dtype=f64 dims={dims}\n".encode("ascii"))
    stream.write(arr.tobytes(order="C"))


def read_stnr(stream: BinaryIO) -> np.ndarray:
    magic = stream.read(len(STNR_MAGIC))
    if magic != STNR_MAGIC:
        raise FormatError(f"bad STNR magic {magic!r}")
    header = stream.readline().decode("ascii").strip()
    fields = dict(part.split("=", 1) for part in header.split())
    if fields.get("dtype") != "f64":
        raise FormatError(f"unsupported dtype in header {header!r}")
    dims_txt = fields.get("dims", "")
    shape = tuple(int(d) for d in dims_txt.split(",")) if dims_txt else ()
    count = int(np.prod(shape)) if shape else 1
    payload = stream.read(8 * count)
    if len(payload) != 8 * count:
        raise FormatError(f"truncated STNR payload: wanted {8 * count} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def save_stnr(path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_stnr(fh, array)


def load_stnr(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_stnr(fh)


# ---------------------------------------------------------------------------
# ParamStore
# ---------------------------------------------------------------------------

class ParamStore(MutableMapping):
    """Named map from dot-separated paths to tensors, iterated in sorted order."""

    def __init__(self, items=None):
        self._items: dict[str, Tensor] = {}
        if items:
            for k, v in dict(items).items():
                self[k] = v

    def __getitem__(self, path: str) -> Tensor:
        return self._items[path]

    def __setitem__(self, path: str, value) -> None:
        if not isinstance(path, str) or not _PATH_RE.fullmatch(path):
            raise KeyError(f"invalid parameter path {path!r}")
        self._items[path] = value if isinstance(value, Tensor) else Tensor(value)

    def __delitem__(self, path: str) -> None:
        del self._items[path]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._items))

    def __len__(self) -> int:
        return len(self._items)

    def write(self, stream: BinaryIO) -> None:
        stream.write(STORE_MAGIC)
        stream.write(f"count={len(self)}\n".encode("ascii"))
        for path in self:
            stream.write(f"name={path}\n".encode("utf-8"))
            write_stnr(stream, self._items[path].data)

    @classmethod
    def read(cls, stream: BinaryIO) -> "ParamStore":
        if stream.read(len(STORE_MAGIC)) != STORE_MAGIC:
            raise FormatError("bad ParamStore magic")
        count_line = stream.readline().decode("ascii").strip()
        if not count_line.startswith("count="):
            raise FormatError(f"bad ParamStore count line {count_line!r}")
        store = cls()
        for _ in range(int(count_line[6:])):
            name_line = stream.readline().decode("utf-8").rstrip("\n")
            if not name_line.startswith("name="):
                raise FormatError(f"bad ParamStore record header {name_line!r}")
            store[name_line[5:]] = Tensor(read_stnr(stream))
        return store

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.write(buf)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamStore":
        return cls.read(io.BytesIO(blob))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            self.write(fh)

    @classmethod
    def load(cls, path) -> "ParamStore":
        with open(path, "rb") as fh:
            return cls.read(fh)


# ---------------------------------------------------------------------------
# seeded generator
# ---------------------------------------------------------------------------

def splitmix64(state: int, count: int) -> np.ndarray:
    """First ``count`` outputs of SplitMix64 started from ``state``."""
    steps = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(state & _MASK64) + steps * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniform(state: int, count: int) -> np.ndarray:
    """Doubles in [0, 1) from the top 53 bits of SplitMix64 outputs."""
    return (splitmix64(state, count) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def path_seed(seed: int, path: str) -> int:
    """Mix a global seed with an FNV-1a hash of the parameter path."""
    h = 0xCBF29CE484222325
    for byte in path.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return int(splitmix64((seed & _MASK64) ^ h, 1)[0])


def kaiming_uniform(shape: tuple, fan_in: int, seed: int, path: str) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    u = uniform(path_seed(seed, path), int(np.prod(shape)))
    return ((2.0 * u - 1.0) * bound).reshape(shape)
