"""Named, reproducible experiment setups.

A preset bundles a world config and any scenario constants (cost plans,
nominal request shapes) so experiments can be re-run from a single name.
"""
from __future__ import annotations

from .pipeline import ArchitecturePlan
from .simworld import WorldConfig

# Nominal request shape for the latency scenario: M retrieved ads, N
# creatives per ad, L served slots.
TABLE1_SHAPE = {"m_candidates": 1000, "n_per_ad": 8, "l_slots": 5}


def counterexample_world(seed: int = 0) -> WorldConfig:
    """Two-ad world where sCTR contradicts the true average CTR.

    Ad 0 has 2 creatives at CTR 0.2; ad 1 has 3 creatives at CTR 0.3.
    Under balanced traffic and a random ranker, matched impressions skew
    toward the small-bundle (worse) ad, so sCTR lands at 0.24 while both
    the true average CTR and NSCTR sit at 0.25."""
    return WorldConfig(
        num_users=100,
        num_ads=2,
        slots=1,
        retrieval_size=2,
        forced_ad_ctrs=((0.2, 2), (0.3, 3)),
        seed=seed,
    )


def table1_plans() -> dict[str, ArchitecturePlan]:
    """Cost-calibrated architecture plans for the nominal 1000x8 request.

    Each plan carries its own creative-stage cost: the small post-ranking
    stage prices 40 creatives at 4 ms, the serial pre-ranking stage prices
    all 8000 at 17 ms, and the parallel stage gets a 28 ms budget that still
    hides entirely behind the 90 ms ad ranker."""
    return {
        "NoCR": ArchitecturePlan("NoCR", ar_ms=90.0),
        "PostCR": ArchitecturePlan("PostCR", ar_ms=90.0, cr_per_candidate_us=100.0),
        "PreCR": ArchitecturePlan("PreCR", ar_ms=90.0, cr_per_candidate_us=2.125),
        "PeriCR": ArchitecturePlan("PeriCR", ar_ms=90.0, cr_per_candidate_us=3.5),
    }


def default_world(seed: int = 0) -> WorldConfig:
    """Desk-scale world used by training and correlation experiments."""
    return WorldConfig(seed=seed)


WORLD_PRESETS = {
    "counterexample": counterexample_world,
    "default-world": default_world,
}


def world_preset(name: str, seed: int = 0) -> WorldConfig:
    if name not in WORLD_PRESETS:
        known = ", ".join(sorted(WORLD_PRESETS))
        raise KeyError(f"unknown world preset {name!r} (known: {known})")
    return WORLD_PRESETS[name](seed)
