"""Hashed embedding tables (the "hashing trick" for sparse id features)."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_C1 = np.uint64(0x9E3779B97F4A7C15)
_C2 = np.uint64(0xBF58476D1CE4E5B9)
_C3 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):  # uint64 wraparound is the point
        z = (x + _C1) & _MASK
        z = ((z ^ (z >> np.uint64(30))) * _C2) & _MASK
        z = ((z ^ (z >> np.uint64(27))) * _C3) & _MASK
        return z ^ (z >> np.uint64(31))


def stable_hash(feature_id, seed: int = 0) -> int:
    """Deterministic 64-bit hash of an id, stable across processes and runs."""
    if isinstance(feature_id, (bytes, str)):
        raw = feature_id.encode("utf-8") if isinstance(feature_id, str) else feature_id
        base = zlib.crc32(raw) | (len(raw) << 32)
    else:
        base = int(feature_id)
    x = np.uint64(base & 0xFFFFFFFFFFFFFFFF) ^ _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    return int(_splitmix64(x))


def hash_ids(ids: np.ndarray, seed: int) -> np.ndarray:
    """Vectorized stable_hash for integer id arrays."""
    x = ids.astype(np.uint64) ^ _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    return _splitmix64(x)


@dataclass
class EmbeddingTable:
    """A ``num_buckets x dim`` table addressed by hashed feature ids.

    ``num_buckets`` must be a power of two; the lookup index is
    ``hash(id, seed) mod num_buckets``.
    """

    num_buckets: int
    dim: int
    hash_seed: int = 0
    values: np.ndarray = field(default=None)  # type: ignore[assignment]
    init_scale: float = 0.05

    def __post_init__(self):
        if self.num_buckets < 1 or self.num_buckets & (self.num_buckets - 1):
            raise ValueError(f"num_buckets must be a power of two, got {self.num_buckets}")
        if self.values is None:
            rng = np.random.Generator(np.random.Philox(key=self.hash_seed & 0xFFFFFFFF))
            self.values = rng.uniform(-self.init_scale, self.init_scale,
                                      size=(self.num_buckets, self.dim))
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.num_buckets, self.dim):
            raise ValueError("values shape does not match (num_buckets, dim)")

    def bucket(self, feature_id) -> int:
        return stable_hash(feature_id, self.hash_seed) & (self.num_buckets - 1)

    def buckets(self, ids: np.ndarray) -> np.ndarray:
        """Vectorized bucket indices for an int64 id array."""
        return (hash_ids(np.asarray(ids), self.hash_seed)
                & np.uint64(self.num_buckets - 1)).astype(np.int64)

    def lookup(self, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Rows for an id array; returns (rows, bucket_indices)."""
        idx = self.buckets(ids)
        return self.values[idx], idx


def hash_embed(feature_id, table: EmbeddingTable) -> np.ndarray:
    """Embedding row for one feature id (a copy; the table is not aliased)."""
    return table.values[table.bucket(feature_id)].copy()
