"""Serving architectures, the analytic latency model, and the A/B harness.

Four ways of placing creative ranking around ad ranking are simulated:

- ``NoCR``: no creative ranking; each served ad shows a random creative.
- ``PostCR``: creative ranking runs after ad ranking, on the L survivors.
- ``PreCR``: creative ranking runs first on every candidate, and the ad
  ranking sees the chosen creative (creative-aware ad scores).
- ``PeriCR``: ad and creative ranking run in parallel on the full candidate
  set; request time is the max of the two stages.

Latency is an analytic cost model (deterministic arithmetic over stage
costs), not wall-clock measurement. Experiments use common random numbers:
every arm sees the same users, retrieval candidates, and click draws, so an
A/A comparison is exactly zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import DegenerateInputError, pearson, replay_report
from .rankers import RandomRanker, TableRanker, noisy_oracle_ranker
from .records import LogColumns
from .simworld import CREATIVE_BASE, World, generate_log_columns, CreativePolicy

ARCH_TAGS = ("NoCR", "PostCR", "PreCR", "PeriCR")
_REQ_CHUNK = 16384


@dataclass
class ArchitecturePlan:
    """One serving architecture plus its stage cost parameters (ms / us)."""

    tag: str
    retrieval_ms: float = 0.0
    ar_ms: float = 90.0
    cr_per_candidate_us: float = 0.0
    cr_fixed_ms: float = 0.0
    overhead_ms: float = 0.0

    def __post_init__(self):
        if self.tag not in ARCH_TAGS:
            raise ValueError(f"unknown architecture tag {self.tag!r}")
        for name in ("retrieval_ms", "ar_ms", "cr_per_candidate_us",
                     "cr_fixed_ms", "overhead_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def plan_latency(plan: ArchitecturePlan, m_candidates: int, n_per_ad: int,
                 l_slots: int) -> float:
    """Request time in ms for nominal candidate counts."""
    if min(m_candidates, n_per_ad, l_slots) <= 0:
        raise ValueError("candidate counts must be positive")
    return _latency(plan, float(m_candidates * n_per_ad), float(l_slots * n_per_ad))


def _latency(plan: ArchitecturePlan, creatives_all, creatives_survivors):
    """Core cost arithmetic; creative counts may be per-request arrays."""
    base = plan.retrieval_ms + plan.overhead_ms
    cr_all = plan.cr_fixed_ms + plan.cr_per_candidate_us * creatives_all / 1000.0
    cr_surv = plan.cr_fixed_ms + plan.cr_per_candidate_us * creatives_survivors / 1000.0
    if plan.tag == "NoCR":
        return base + plan.ar_ms + 0.0 * creatives_all
    if plan.tag == "PostCR":
        return base + plan.ar_ms + cr_surv
    if plan.tag == "PreCR":
        return base + cr_all + plan.ar_ms
    return base + np.maximum(plan.ar_ms, cr_all)  # PeriCR


@dataclass
class ServingModels:
    """Score sources for one experiment arm.

    ``ad_table`` is (num_users, num_ads); ``creative_table`` is either
    (num_users, num_ads, max_n) or a user-independent (num_ads, max_n),
    nan-padded for invalid creative slots. ``creative_policy="random"``
    picks a uniform creative per request (the NoCR behaviour)."""

    ad_table: np.ndarray | None = None
    creative_table: np.ndarray | None = None
    ad_policy: str = "table"        # "table" | "random"
    creative_policy: str = "argmax"  # "argmax" | "random"


@dataclass
class ServedPage:
    slots: list            # [(ad_id, creative_uid), ...] in rank order
    pctrs: list            # per-slot score used for ordering
    rt_ms: float

    def validate(self, world: World) -> None:
        ads = [a for a, _ in self.slots]
        if len(set(ads)) != len(ads):
            raise ValueError("served ads must be distinct")
        if len(ads) > world.config.slots:
            raise ValueError("too many slots served")
        for a, c in self.slots:
            if c not in world.candidates(a):
                raise ValueError(f"creative {c} does not belong to ad {a}")


@dataclass
class ExperimentReport:
    arm: str
    requests: int
    impressions: int
    clicks: int
    ctr: float
    rpm: float
    rt_mean_ms: float
    rt_p99_ms: float
    baseline: str | None = None
    ctr_lift: float | None = None
    rpm_lift: float | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _creative_rows(table: np.ndarray, users, ads):
    if table.ndim == 2:
        return table[ads]
    return table[users[:, None] if ads.ndim == 2 else users, ads]


def _serve_chunk(plan: ArchitecturePlan, world: World, models: ServingModels,
                 users, cand, ad_rand, cr_rand, l_slots):
    """Vectorized page construction for one chunk of requests.

    Returns (ads (B,L), creative idx (B,L), pctr (B,L), rt (B,))."""
    B, m = cand.shape
    n_cand = world.n_creatives[cand]                       # (B, m)

    if models.creative_policy == "random":
        c_idx = (cr_rand * n_cand).astype(np.int64)
    else:
        if models.creative_table is None:
            raise ValueError(f"{plan.tag} arm needs a creative score table")
        rows = _creative_rows(models.creative_table, users, cand)   # (B, m, max_n)
        c_idx = np.where(np.isnan(rows), -np.inf, rows).argmax(axis=2)

    if plan.tag == "PreCR":
        if models.creative_table is None:
            raise ValueError("PreCR requires a creative-aware score source")
        rows = _creative_rows(models.creative_table, users, cand)
        ad_scores = np.take_along_axis(rows, c_idx[:, :, None], axis=2)[:, :, 0]
    elif models.ad_policy == "random":
        ad_scores = ad_rand
    else:
        if models.ad_table is None:
            raise ValueError(f"{plan.tag} arm needs an ad score table")
        ad_scores = models.ad_table[users[:, None], cand]

    order = np.argsort(-ad_scores, axis=1, kind="stable")[:, :l_slots]
    top_ads = np.take_along_axis(cand, order, axis=1)
    top_cidx = np.take_along_axis(c_idx, order, axis=1)
    top_pctr = np.take_along_axis(ad_scores, order, axis=1)

    rt = _latency(plan, n_cand.sum(axis=1).astype(np.float64),
                  world.n_creatives[top_ads].sum(axis=1).astype(np.float64))
    rt = np.broadcast_to(np.asarray(rt, dtype=np.float64), (B,))
    return top_ads, top_cidx, top_pctr, rt


def run_request(plan: ArchitecturePlan, user: int, world: World,
                models: ServingModels, seed: int = 0) -> ServedPage:
    """Serve one request: retrieval sample, ranking per the plan, no clicks."""
    rng = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFF, 0x5E7]))
    m = world.config.retrieval_size
    cand = rng.permutation(world.num_ads)[:m][None, :]
    if cand.shape[1] == 0:
        raise ValueError("empty retrieval set")
    ad_rand = rng.random((1, m))
    cr_rand = rng.random((1, m))
    ads, cidx, pctr, rt = _serve_chunk(
        plan, world, models, np.asarray([user]), cand, ad_rand, cr_rand,
        world.config.slots,
    )
    slots = [(int(a), int(a) * CREATIVE_BASE + int(c))
             for a, c in zip(ads[0], cidx[0])]
    return ServedPage(slots, [float(x) for x in pctr[0]], float(rt[0]))


@dataclass
class ExperimentArm:
    name: str
    plan: ArchitecturePlan
    models: ServingModels


def run_experiment(arms: list[ExperimentArm], world: World, num_requests: int,
                   seed: int, baseline: str | None = None) -> list[ExperimentReport]:
    """Simulated A/B test with common random numbers across arms.

    Every arm sees the same users, retrieval candidates, and click draws;
    clicks are sampled from the true CTR of the served (ad, creative)."""
    if not arms:
        raise ValueError("need at least one arm")
    baseline = baseline or arms[0].name
    if baseline not in {a.name for a in arms}:
        raise ValueError(f"baseline arm {baseline!r} not present")
    tensor = world.ctr_tensor()
    cpc = world.ad_cpc
    m = world.config.retrieval_size
    L = world.config.slots
    A = world.num_ads
    reports = []
    for arm in arms:
        clicks = 0
        revenue = 0.0
        rts = np.empty(num_requests)
        done = 0
        chunk_id = 0
        while done < num_requests:
            B = min(_REQ_CHUNK, num_requests - done)
            # draw order is fixed and arm-independent: common random numbers
            rng = np.random.Generator(
                np.random.Philox(key=[seed & 0xFFFFFFFF,
                                      (0xAB << 32) | chunk_id]))
            users = rng.integers(0, world.num_users, size=B)
            cand = np.argpartition(rng.random((B, A)), m - 1, axis=1)[:, :m] \
                if m < A else np.broadcast_to(np.arange(A), (B, A)).copy()
            ad_rand = rng.random((B, m))
            cr_rand = rng.random((B, m))
            click_u = rng.random((B, L))
            ads, cidx, _, rt = _serve_chunk(arm.plan, world, arm.models,
                                            users, cand, ad_rand, cr_rand, L)
            p_true = tensor[users[:, None], ads, cidx]
            clicked = click_u < p_true
            clicks += int(clicked.sum())
            revenue += float((clicked * cpc[ads]).sum())
            rts[done:done + B] = rt
            done += B
            chunk_id += 1
        impressions = num_requests * L
        reports.append(ExperimentReport(
            arm=arm.name,
            requests=num_requests,
            impressions=impressions,
            clicks=clicks,
            ctr=clicks / impressions,
            rpm=revenue / num_requests * 1000.0,
            rt_mean_ms=float(rts.mean()),
            rt_p99_ms=float(np.percentile(rts, 99)),
        ))
    base = next(r for r in reports if r.arm == baseline)
    for r in reports:
        r.baseline = baseline
        if base.ctr > 0:
            r.ctr_lift = r.ctr / base.ctr - 1.0
        if base.rpm > 0:
            r.rpm_lift = r.rpm / base.rpm - 1.0
    return reports


# ---------------------------------------------------------------------------
# Offline/online metric correlation study
# ---------------------------------------------------------------------------

@dataclass
class CorrelationStudy:
    rows: list                 # one dict per ranker
    correlations: dict         # metric name -> Pearson vs online CTR lift
    flags: list = field(default_factory=list)


def make_ranker_family(world: World, taus=(1.5, 1.0, 0.75, 0.5, 0.25, 0.0),
                       seed: int = 0) -> list[tuple[str, TableRanker]]:
    """Noisy population oracles spanning ranker quality; each ranker gets an
    independent noise realization.

    The default noise levels keep the rankers within a plausible quality
    band. With an extreme spread (a pure-noise ranker against a perfect
    oracle) every offline metric correlates near 1.0 with online lift and
    comparisons between metrics degenerate to coin flips."""
    return [(f"tau={t:g}", noisy_oracle_ranker(world, t, seed + 101 * i))
            for i, t in enumerate(taus)]


def balanced_eval_log(world: World, num_impressions: int, seed: int) -> LogColumns:
    """Replay log with equal per-ad traffic and round-robin creative exposure.

    The per-ad impression count is rounded to a multiple of the bundle-size
    LCM so every creative of every ad is shown exactly equally often."""
    sizes = np.unique(world.n_creatives).tolist()
    l = math.lcm(*[int(s) for s in sizes])
    per_ad = max((num_impressions // world.num_ads // l), 1) * l
    return generate_log_columns(world, CreativePolicy(tag="round-robin"),
                                per_ad * world.num_ads, seed,
                                ad_sampling="balanced")


def production_eval_log(world: World, num_impressions: int, seed: int,
                        tau: float = 1.0, epsilon: float = 0.5) -> LogColumns:
    """Replay log from a production-like logger: a noisy-oracle creative
    choice with uniform-random exploration at rate ``epsilon``.

    Under such a logger the matched-impression rate of an evaluated ranker
    varies per ad with how often it agrees with the logger, which is the
    selection bias sCTR suffers from and NSCTR corrects."""
    policy = CreativePolicy(tag="biased", tau=tau, epsilon=epsilon,
                            seed=seed ^ 0x51A5)
    return generate_log_columns(world, policy, num_impressions, seed,
                                ad_sampling="balanced")


def correlate_offline_online(rankers: list[tuple[str, object]], world: World,
                             eval_log: LogColumns, seed: int,
                             num_requests: int = 200_000,
                             baseline_index: int = 0) -> CorrelationStudy:
    """Offline metric lifts vs simulated online CTR lift, per ranker.

    sCTR/NSCTR report relative lift against the baseline ranker (by
    convention the first, worst one); AUC/GAUC report absolute lift in
    points. Online lift comes from a common-random-number experiment whose
    arms share a random ad layer and differ only in creative selection."""
    if len(rankers) < 2:
        raise ValueError("need at least two rankers (a baseline and a candidate)")
    offline = []
    for name, ranker in rankers:
        offline.append((name, replay_report(eval_log, ranker)))

    arms = [ExperimentArm(
        name="__random__",
        plan=ArchitecturePlan("PeriCR"),
        models=ServingModels(ad_policy="random", creative_policy="random"),
    )]
    for name, ranker in rankers:
        arms.append(ExperimentArm(
            name=name,
            plan=ArchitecturePlan("PeriCR"),
            models=ServingModels(ad_policy="random",
                                 creative_table=ranker.table(world)),
        ))
    reports = {r.arm: r for r in run_experiment(arms, world, num_requests, seed,
                                                baseline="__random__")}

    base_name, base_rep = offline[baseline_index]
    rows, flags = [], []
    for name, rep in offline:
        row = {
            "ranker": name,
            "sctr": rep["sctr"],
            "nsctr": rep["nsctr"],
            "auc": rep["auc"],
            "gauc": rep["gauc"],
            "online_ctr": reports[name].ctr,
            "online_ctr_lift": reports[name].ctr_lift,
        }
        row["sctr_lift"] = _rel_lift(rep["sctr"], base_rep["sctr"])
        row["nsctr_lift"] = _rel_lift(rep["nsctr"], base_rep["nsctr"])
        row["auc_lift"] = _abs_lift(rep["auc"], base_rep["auc"])
        row["gauc_lift"] = _abs_lift(rep["gauc"], base_rep["gauc"])
        rows.append(row)

    online = [r["online_ctr_lift"] for r in rows]
    correlations = {}
    for metric in ("sctr_lift", "nsctr_lift", "auc_lift", "gauc_lift"):
        series = [r[metric] for r in rows]
        if any(v is None for v in series):
            flags.append(f"{metric}: undefined for some ranker")
            correlations[metric] = None
            continue
        try:
            correlations[metric] = pearson(series, online)
        except DegenerateInputError:
            flags.append(f"{metric}: degenerate variance")
            correlations[metric] = None
    return CorrelationStudy(rows, correlations, flags)


def _rel_lift(value, base):
    if value is None or base in (None, 0):
        return None
    return value / base - 1.0


def _abs_lift(value, base):
    if value is None or base is None:
        return None
    return value - base
