"""Reference creative rankers used for evaluation and simulated serving.

All rankers are pure: scores are deterministic functions of their seed and
inputs. They satisfy the creative-ranker contract (callable per record) and
expose vectorized ``score_many`` for columnar replay.
"""
from __future__ import annotations

import numpy as np

from .nnet.hashing import _splitmix64, hash_ids
from .simworld import CREATIVE_BASE, World, ad_creative_quality


class _RecordCallable:
    def __call__(self, record, creative_id) -> float:
        return float(self.score_many(np.asarray([record.user_id]),
                                     np.asarray([record.ad_id]),
                                     np.asarray([creative_id]))[0])


class RandomRanker(_RecordCallable):
    """Independent uniform score per (user, ad, creative) triple."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def score_many(self, users, ads, creatives) -> np.ndarray:
        u = np.asarray(users, dtype=np.int64)
        a = np.asarray(ads, dtype=np.int64)
        c = np.asarray(creatives, dtype=np.int64)
        h = hash_ids(u, self.seed) ^ _splitmix64(a.astype(np.uint64) * np.uint64(0x9E37)
                                                 ^ c.astype(np.uint64))
        return (_splitmix64(h) >> np.uint64(11)).astype(np.float64) / float(1 << 53)

    def table(self, world: World) -> np.ndarray:
        return _table_from(self, world)


class OracleRanker(_RecordCallable):
    """Scores by the world's true click probability (per-user oracle)."""

    def __init__(self, world: World):
        self.world = world

    def score_many(self, users, ads, creatives) -> np.ndarray:
        idx = np.asarray(creatives, dtype=np.int64) % CREATIVE_BASE
        return self.world.ctr_tensor()[np.asarray(users, dtype=np.int64),
                                       np.asarray(ads, dtype=np.int64), idx]

    def table(self, world: World) -> np.ndarray:
        return world.ctr_tensor()


class TableRanker(_RecordCallable):
    """Scores from a fixed per-(ad, creative) table (user-independent)."""

    def __init__(self, table: np.ndarray):
        self.scores = table  # (A, max_n)

    def score_many(self, users, ads, creatives) -> np.ndarray:
        idx = np.asarray(creatives, dtype=np.int64) % CREATIVE_BASE
        return self.scores[np.asarray(ads, dtype=np.int64), idx]

    def table(self, world: World) -> np.ndarray:
        return self.scores


def noisy_oracle_ranker(world: World, tau: float, seed: int = 0) -> TableRanker:
    """Population-level oracle corrupted by ``tau`` units of fixed noise.

    ``tau = 0`` is the exact population oracle; ``tau = inf`` pure noise."""
    return TableRanker(ad_creative_quality(world, tau, seed))


def _table_from(ranker, world: World) -> np.ndarray:
    max_n = world.max_n
    users, ads, slots = np.meshgrid(np.arange(world.num_users),
                                    np.arange(world.num_ads),
                                    np.arange(max_n), indexing="ij")
    valid = slots < world.n_creatives[ads]
    out = np.full(users.shape, np.nan)
    out[valid] = ranker.score_many(users[valid], ads[valid],
                                   ads[valid] * CREATIVE_BASE + slots[valid])
    return out
