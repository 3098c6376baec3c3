"""Feature extraction from a world for the ranking towers."""
from __future__ import annotations

import numpy as np

from ..simworld import World

_CROSS_PRIME = 1_000_003


class FeatureEncoder:
    """Turns (user, ad, creative) id arrays into tower input batches."""

    def __init__(self, world: World):
        self.behavior = world.behavior
        self.demo = world.user_demo

    def ar_arrays(self, users: np.ndarray, ads: np.ndarray) -> dict:
        users = np.asarray(users, dtype=np.int64)
        ads = np.asarray(ads, dtype=np.int64)
        seq = self.behavior[users]
        mask = seq >= 0
        return {
            "user": users,
            "ad": ads,
            "cross": users * _CROSS_PRIME + ads,
            "demo": self.demo[users],
            "seq": np.where(mask, seq, 0),
            "seq_mask": mask,
        }

    def cr_arrays(self, users: np.ndarray, ads: np.ndarray,
                  creatives: np.ndarray) -> dict:
        users = np.asarray(users, dtype=np.int64)
        return {
            "user": users,
            "ad": np.asarray(ads, dtype=np.int64),
            "demo": self.demo[users],
            "creative": np.asarray(creatives, dtype=np.int64),
            "content": np.asarray(creatives, dtype=np.int64),
        }
