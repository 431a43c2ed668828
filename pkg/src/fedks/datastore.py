"""Dataset bookkeeping: splits, client shards, scaling and the KSDS file format.

KSDS layout (little-endian)::

    magic "KSDS" | version u16 = 1 | reserved u16
    3 x block: rows u64 | cols u64 | rows*cols f64 (row-major)   train, validation, test
    scaler mean f64 | scaler std f64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateDataError, FormatError, InvalidArgument
from .kssolver import Trajectory

MAGIC = b"KSDS"
VERSION = 1
_HEAD = struct.Struct("<4sHH")
_BLOCK = struct.Struct("<QQ")
_SCALER = struct.Struct("<dd")
HEADER_BYTES = _HEAD.size + 3 * _BLOCK.size + _SCALER.size

SCHEMES = ("contiguous", "strided")


@dataclass(frozen=True)
class Scaler:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DegenerateDataError(f"scaler std must be positive, got {self.std}")

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def invert(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) * self.std + self.mean


@dataclass
class DatasetSplits:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    scaler: Scaler


@dataclass
class ClientShard:
    client_id: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise InvalidArgument(f"shard {self.client_id} must hold at least one row")

    @property
    def n_k(self) -> int:
        return self.data.shape[0]


def _rows(x) -> np.ndarray:
    if isinstance(x, Trajectory):
        x = x.snapshots
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgument("expected a 2-D snapshot matrix (samples x grid)")
    return x


def split(traj, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Temporal prefix split: the first ``floor(fraction * M)`` rows train."""
    X = _rows(traj)
    if X.shape[0] == 0:
        raise InvalidArgument("cannot split an empty trajectory")
    if not 0 < train_fraction <= 1:
        raise InvalidArgument("train_fraction must lie in (0, 1]")
    n_train = int(np.floor(train_fraction * X.shape[0] + 1e-9))
    return X[:n_train].copy(), X[n_train:].copy()


def partition(train, K: int, scheme: str = "contiguous", seed: int | None = None) -> list[ClientShard]:
    """Split training rows into K disjoint shards whose sizes differ by at most one.

    ``contiguous`` hands each client a consecutive temporal block; ``strided``
    deals rows round-robin. With a seed, the strided assignment starts from a
    seeded rotation of the client order (sizes are unchanged).
    """
    X = _rows(train)
    n = X.shape[0]
    if K < 1:
        raise InvalidArgument("K must be >= 1")
    if K > n:
        raise InvalidArgument(f"K={K} exceeds the number of training rows ({n})")
    if scheme == "contiguous":
        sizes = np.full(K, n // K)
        sizes[: n % K] += 1
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        return [ClientShard(k, X[bounds[k] : bounds[k + 1]].copy()) for k in range(K)]
    if scheme == "strided":
        offset = 0 if seed is None else int(np.random.default_rng(seed).integers(K))
        owner = (np.arange(n) + offset) % K
        return [ClientShard(k, X[owner == k].copy()) for k in range(K)]
    raise InvalidArgument(f"unknown partition scheme {scheme!r}; expected one of {SCHEMES}")


def fit_scaler(train) -> Scaler:
    X = _rows(train)
    if X.size == 0:
        raise InvalidArgument("cannot fit a scaler on empty data")
    std = float(X.std())
    if std < 1e-12:
        raise DegenerateDataError("training data is constant; std below 1e-12")
    return Scaler(float(X.mean()), std)


def apply(scaler: Scaler, X) -> np.ndarray:
    return scaler.apply(X)


def invert(scaler: Scaler, X) -> np.ndarray:
    return scaler.invert(X)


def make_splits(production, test, train_fraction: float = 0.8) -> DatasetSplits:
    train, val = split(production, train_fraction)
    return DatasetSplits(train, val, _rows(test).copy(), fit_scaler(train))


# ---------------------------------------------------------------------------
# Binary IO


def write_block(buf: bytearray, X) -> None:
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise InvalidArgument("blocks must be 2-D")
    buf += _BLOCK.pack(*X.shape)
    buf += X.tobytes()


def read_block(data: bytes, offset: int) -> tuple[np.ndarray, int]:
    if len(data) < offset + _BLOCK.size:
        raise FormatError("truncated block header", len(data))
    rows, cols = _BLOCK.unpack_from(data, offset)
    offset += _BLOCK.size
    nbytes = 8 * rows * cols
    if len(data) < offset + nbytes:
        raise FormatError(f"truncated block payload: need {nbytes} bytes", len(data))
    X = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=offset)
    return X.reshape(rows, cols).astype(np.float64), offset + nbytes


def dumps(splits: DatasetSplits) -> bytes:
    buf = bytearray(_HEAD.pack(MAGIC, VERSION, 0))
    for X in (splits.train, splits.validation, splits.test):
        write_block(buf, X)
    buf += _SCALER.pack(splits.scaler.mean, splits.scaler.std)
    return bytes(buf)


def loads(data: bytes) -> DatasetSplits:
    if len(data) < _HEAD.size:
        raise FormatError("file shorter than header", len(data))
    magic, version, _ = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    off = _HEAD.size
    blocks = []
    for _ in range(3):
        X, off = read_block(data, off)
        blocks.append(X)
    if len(data) < off + _SCALER.size:
        raise FormatError("truncated scaler record", len(data))
    mean, std = _SCALER.unpack_from(data, off)
    off += _SCALER.size
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes", off)
    return DatasetSplits(*blocks, scaler=Scaler(mean, std))


def save_dataset(path, splits: DatasetSplits) -> None:
    Path(path).write_bytes(dumps(splits))


def load_dataset(path) -> DatasetSplits:
    return loads(Path(path).read_bytes())


def client_shards(splits: DatasetSplits, K: int, scheme: str = "contiguous", seed: int | None = None) -> list[ClientShard]:
    """Scaled training split partitioned into K shards (the federated view)."""
    return partition(splits.scaler.apply(splits.train), K, scheme, seed)


# single-block matrix file (error fields): magic "KSEF" | version u16 | reserved u16 | block
FIELD_MAGIC = b"KSEF"


def save_matrix(path, X) -> None:
    buf = bytearray(_HEAD.pack(FIELD_MAGIC, VERSION, 0))
    write_block(buf, X)
    Path(path).write_bytes(bytes(buf))


def load_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise FormatError("file shorter than header", len(data))
    magic, version, _ = _HEAD.unpack_from(data, 0)
    if magic != FIELD_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    X, off = read_block(data, _HEAD.size)
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes", off)
    return X
