"""Synthetic ground-truth universe for ad/creative ranking experiments.

A world holds users (latent vector + one binary demographic attribute),
ads (latent vector, CPC bid, creative bundle), and per-creative effects
including a demographic interaction, so the true click probability of any
(user, ad, creative) triple is knowable. Everything is a pure function of
(config, seed).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .records import ImpressionRecord, LogColumns

CREATIVE_BASE = 100  # creative uid = ad_id * CREATIVE_BASE + creative index
MAX_CREATIVES = 20


def creative_uid(ad_id: int, index: int) -> int:
    return int(ad_id) * CREATIVE_BASE + int(index)


def creative_index(uid: int) -> int:
    return int(uid) % CREATIVE_BASE


@dataclass
class WorldConfig:
    num_users: int = 2000
    num_ads: int = 50
    creatives_min: int = 2
    creatives_max: int = 8
    slots: int = 5
    latent_dim: int = 4
    latent_scale: float = 1.2
    creative_effect_scale: float = 0.10
    demo_effect_scale: float = 0.06
    base_logit: float = -3.95
    cpc_log_mean: float = -1.0
    cpc_log_sigma: float = 0.5
    behavior_len: int = 20
    retrieval_size: int = 50
    seed: int = 0
    # optional per-ad forced CTRs: list of (ctr, n_creatives); overrides latents
    forced_ad_ctrs: tuple = ()
    # optional per-ad multiplier on creative effect scale ("" | "by_count" | "random")
    effect_heterogeneity: str = ""

    def validate(self) -> None:
        if self.num_users < 1 or self.num_ads < 1:
            raise ValueError("num_users and num_ads must be positive")
        if not (1 <= self.creatives_min <= self.creatives_max <= MAX_CREATIVES):
            raise ValueError(f"creative count range must sit in [1,{MAX_CREATIVES}]")
        if self.slots > max(1, self.num_ads // 10):
            raise ValueError(f"slots={self.slots} too large for {self.num_ads} ads (need L << M)")
        if self.creative_effect_scale < 0 or self.demo_effect_scale < 0:
            raise ValueError("effect scales must be non-negative")
        if not 1 <= self.retrieval_size <= self.num_ads:
            raise ValueError("retrieval_size must be in [1, num_ads]")
        if self.forced_ad_ctrs and len(self.forced_ad_ctrs) != self.num_ads:
            raise ValueError("forced_ad_ctrs must give one (ctr, n) pair per ad")


@dataclass
class World:
    config: WorldConfig
    user_latent: np.ndarray     # (U, k)
    user_demo: np.ndarray       # (U,) in {0,1}
    ad_latent: np.ndarray       # (A, k)
    ad_cpc: np.ndarray          # (A,)
    n_creatives: np.ndarray     # (A,)
    creative_effect: np.ndarray  # (A, max_n), nan-padded
    demo_effect: np.ndarray      # (A, max_n), nan-padded
    behavior: np.ndarray         # (U, T) clicked ad ids, -1 padded
    ctr_override: np.ndarray | None = None  # (A, max_n) forced CTRs
    _ctr_cache: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_users(self) -> int:
        return len(self.user_latent)

    @property
    def num_ads(self) -> int:
        return len(self.ad_latent)

    @property
    def max_n(self) -> int:
        return self.creative_effect.shape[1]

    def candidates(self, ad_id: int) -> tuple:
        return tuple(creative_uid(ad_id, j) for j in range(int(self.n_creatives[ad_id])))

    def candidate_map(self) -> dict[int, tuple]:
        return {a: self.candidates(a) for a in range(self.num_ads)}

    def ctr_tensor(self) -> np.ndarray:
        """True CTR for every (user, ad, creative) triple; invalid creatives nan."""
        if self._ctr_cache is not None:
            return self._ctr_cache
        if self.ctr_override is not None:
            tensor = np.broadcast_to(
                self.ctr_override, (self.num_users,) + self.ctr_override.shape
            ).copy()
        else:
            cfg = self.config
            ua = self.user_latent @ self.ad_latent.T + cfg.base_logit  # (U, A)
            sign = 2.0 * self.user_demo - 1.0                          # (U,)
            logits = (ua[:, :, None] + self.creative_effect[None]
                      + sign[:, None, None] * self.demo_effect[None])
            tensor = 1.0 / (1.0 + np.exp(-logits))
        self._ctr_cache = tensor
        return tensor


def generate_world(cfg: WorldConfig) -> World:
    """Deterministically build a world from its config."""
    cfg.validate()
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    k = cfg.latent_dim
    scale = cfg.latent_scale / math.sqrt(k)
    user_latent = rng.normal(0.0, scale, size=(cfg.num_users, k))
    user_demo = rng.integers(0, 2, size=cfg.num_users).astype(np.int64)
    ad_latent = rng.normal(0.0, scale, size=(cfg.num_ads, k))
    ad_cpc = rng.lognormal(cfg.cpc_log_mean, cfg.cpc_log_sigma, size=cfg.num_ads)

    if cfg.forced_ad_ctrs:
        n_creatives = np.asarray([n for _, n in cfg.forced_ad_ctrs], dtype=np.int64)
    else:
        n_creatives = rng.integers(cfg.creatives_min, cfg.creatives_max + 1, size=cfg.num_ads)
    max_n = int(n_creatives.max())
    valid = np.arange(max_n)[None, :] < n_creatives[:, None]

    if cfg.effect_heterogeneity == "by_count":
        per_ad = n_creatives / n_creatives.mean()
    elif cfg.effect_heterogeneity == "random":
        per_ad = rng.uniform(0.4, 1.6, size=cfg.num_ads)
    else:
        per_ad = np.ones(cfg.num_ads)
    ce = rng.normal(0.0, 1.0, size=(cfg.num_ads, max_n)) * cfg.creative_effect_scale
    de = rng.normal(0.0, 1.0, size=(cfg.num_ads, max_n)) * cfg.demo_effect_scale
    ce *= per_ad[:, None]
    de *= per_ad[:, None]
    ce[~valid] = np.nan
    de[~valid] = np.nan

    ctr_override = None
    if cfg.forced_ad_ctrs:
        ctr_override = np.full((cfg.num_ads, max_n), np.nan)
        for a, (ctr, n) in enumerate(cfg.forced_ad_ctrs):
            if not 0.0 < ctr < 1.0:
                raise ValueError("forced CTRs must lie strictly inside (0,1)")
            ctr_override[a, :n] = ctr

    world = World(cfg, user_latent, user_demo, ad_latent, ad_cpc,
                  n_creatives, ce, de,
                  behavior=np.full((cfg.num_users, cfg.behavior_len), -1, dtype=np.int64),
                  ctr_override=ctr_override)
    world.behavior = _warmup_behavior(world, rng)
    return world


def _warmup_behavior(world: World, rng: np.random.Generator) -> np.ndarray:
    """Per-user clicked-ad history from a short warm-up simulation pass."""
    cfg = world.config
    draws = 5 * cfg.behavior_len
    tensor = world.ctr_tensor()
    ads = rng.integers(0, cfg.num_ads, size=(cfg.num_users, draws))
    cidx = (rng.random((cfg.num_users, draws))
            * world.n_creatives[ads]).astype(np.int64)
    users = np.arange(cfg.num_users)[:, None]
    p = tensor[users, ads, cidx]
    clicks = rng.random((cfg.num_users, draws)) < p
    out = np.full((cfg.num_users, cfg.behavior_len), -1, dtype=np.int64)
    for u in range(cfg.num_users):
        clicked = ads[u][clicks[u]][-cfg.behavior_len:]
        if len(clicked):
            out[u, -len(clicked):] = clicked
    return out


def true_ctr(world: World, user: int, ad: int, creative: int) -> float:
    """Ground-truth click probability of one (user, ad, creative) triple."""
    idx = creative_index(creative)
    if creative not in world.candidates(ad):
        raise ValueError(f"creative {creative} is not in ad {ad}'s bundle")
    return float(world.ctr_tensor()[user, ad, idx])


def ecpm(ctr: float, cpc: float) -> float:
    """Effective cost per mille: CTR * CPC * 1000."""
    if not 0.0 <= ctr <= 1.0:
        raise ValueError(f"ctr must be in [0,1], got {ctr}")
    if cpc < 0:
        raise ValueError(f"cpc must be non-negative, got {cpc}")
    return ctr * cpc * 1000.0


# ---------------------------------------------------------------------------
# Creative selection policies and log generation
# ---------------------------------------------------------------------------

@dataclass
class CreativePolicy:
    """How the logged (online) creative is chosen for each impression.

    tags: ``uniform-random`` | ``round-robin`` | ``oracle`` |
    ``noisy-oracle`` (strength ``tau``; ``inf`` means pure noise) |
    ``model`` (argmax of ``table`` of shape (U, A, max_n)) |
    ``biased`` (noisy-oracle choice with probability ``1 - epsilon``,
    uniform-random exploration otherwise; a production-like logger).
    """

    tag: str = "uniform-random"
    tau: float = 0.0
    seed: int = 0
    table: np.ndarray | None = None
    epsilon: float = 0.5


def ad_creative_quality(world: World, tau: float, seed: int) -> np.ndarray:
    """Per-(ad, creative) score: standardized mean CTR plus ``tau`` noise.

    ``tau = inf`` yields pure noise; ``tau = 0`` the exact per-ad oracle at
    the population level. Deterministic in (world, tau, seed)."""
    tensor = world.ctr_tensor()
    # nan slots are user-independent, so a plain mean keeps them nan quietly
    quality = tensor.mean(axis=0)  # (A, max_n)
    valid = ~np.isnan(quality)
    mu = quality[valid].mean()
    sd = quality[valid].std() or 1.0
    z = (quality - mu) / sd
    rng = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFF, 0x6E5]))
    noise = rng.normal(0.0, 1.0, size=quality.shape)
    score = noise if math.isinf(tau) else z + tau * noise
    score = np.where(valid, score, -np.inf)
    return score


def _choose_creatives(world: World, policy: CreativePolicy, users, ads,
                      rng: np.random.Generator) -> np.ndarray:
    n = world.n_creatives[ads]
    if policy.tag == "uniform-random":
        return (rng.random(len(ads)) * n).astype(np.int64)
    if policy.tag == "round-robin":
        # occurrence number of each record within its ad, mod bundle size
        order = np.argsort(ads, kind="stable")
        occ = np.empty(len(ads), dtype=np.int64)
        sorted_ads = ads[order]
        starts = np.r_[0, np.flatnonzero(np.diff(sorted_ads)) + 1]
        ranks = np.arange(len(ads))
        for s, e in zip(starts, np.r_[starts[1:], len(ads)]):
            occ[order[s:e]] = ranks[s:e] - s
        return occ % n
    if policy.tag == "oracle":
        rows = world.ctr_tensor()[users, ads]        # (B, max_n)
        return np.nanargmax(np.where(np.isnan(rows), -np.inf, rows), axis=1)
    if policy.tag == "noisy-oracle":
        score = ad_creative_quality(world, policy.tau, policy.seed)
        chosen_per_ad = score.argmax(axis=1)         # (A,)
        return chosen_per_ad[ads]
    if policy.tag == "biased":
        if not 0.0 <= policy.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0,1]")
        score = ad_creative_quality(world, policy.tau, policy.seed)
        chosen_per_ad = score.argmax(axis=1)
        explore = rng.random(len(ads)) < policy.epsilon
        random_idx = (rng.random(len(ads)) * n).astype(np.int64)
        return np.where(explore, random_idx, chosen_per_ad[ads])
    if policy.tag == "model":
        if policy.table is None:
            raise ValueError("model policy requires a score table")
        rows = policy.table[users, ads]
        return np.where(np.isnan(rows), -np.inf, rows).argmax(axis=1)
    raise ValueError(f"unknown creative policy {policy.tag!r}")


def generate_log_columns(world: World, policy: CreativePolicy, num_impressions: int,
                         seed: int, ad_sampling: str = "uniform") -> LogColumns:
    """Simulate an impression log in columnar form.

    ``ad_sampling="balanced"`` serves every ad the same number of times
    (num_impressions is rounded down to a multiple of the ad count)."""
    rng = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFF, 0x109]))
    A = world.num_ads
    if ad_sampling == "balanced":
        per_ad = num_impressions // A
        ads = np.tile(np.arange(A, dtype=np.int64), per_ad)
    elif ad_sampling == "uniform":
        ads = rng.integers(0, A, size=num_impressions)
    else:
        raise ValueError(f"unknown ad_sampling {ad_sampling!r}")
    users = rng.integers(0, world.num_users, size=len(ads))
    cidx = _choose_creatives(world, policy, users, ads, rng)
    p = world.ctr_tensor()[users, ads, cidx]
    clicks = (rng.random(len(ads)) < p).astype(np.int64)
    shown = ads * CREATIVE_BASE + cidx
    return LogColumns(users, ads, shown, clicks, world.ad_cpc[ads],
                      world.candidate_map())


def generate_log(world: World, policy: CreativePolicy, num_impressions: int,
                 seed: int, ad_sampling: str = "uniform") -> list[ImpressionRecord]:
    """Record-list variant of :func:`generate_log_columns`."""
    return generate_log_columns(world, policy, num_impressions, seed, ad_sampling).to_records()


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_world(world: World, path) -> None:
    cfg_json = json.dumps(asdict(world.config), sort_keys=True)
    arrays = {
        "user_latent": world.user_latent,
        "user_demo": world.user_demo,
        "ad_latent": world.ad_latent,
        "ad_cpc": world.ad_cpc,
        "n_creatives": world.n_creatives,
        "creative_effect": world.creative_effect,
        "demo_effect": world.demo_effect,
        "behavior": world.behavior,
        "config": np.frombuffer(cfg_json.encode("utf-8"), dtype=np.uint8),
    }
    if world.ctr_override is not None:
        arrays["ctr_override"] = world.ctr_override
    np.savez(path, **arrays)


def load_world(path) -> World:
    with np.load(path) as data:
        cfg_dict = json.loads(bytes(data["config"]).decode("utf-8"))
        cfg_dict["forced_ad_ctrs"] = tuple(tuple(x) for x in cfg_dict.get("forced_ad_ctrs", ()))
        cfg = WorldConfig(**cfg_dict)
        return World(
            cfg,
            data["user_latent"].copy(), data["user_demo"].copy(),
            data["ad_latent"].copy(), data["ad_cpc"].copy(),
            data["n_creatives"].copy(), data["creative_effect"].copy(),
            data["demo_effect"].copy(), data["behavior"].copy(),
            ctr_override=data["ctr_override"].copy() if "ctr_override" in data.files else None,
        )
