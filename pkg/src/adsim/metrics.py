"""Ranking-quality metrics: AUC, GAUC, sCTR, NSCTR, and Pearson correlation.

All functions are pure and deterministic. Count aggregation is exact
(integer counters and rational arithmetic), so results do not depend on
summation order.

A *creative ranker* is a callable ``ranker(record, creative_id) -> float``
that must be deterministic for fixed inputs. Rankers may additionally expose
a vectorized ``score_many(user_ids, ad_ids, creative_ids) -> ndarray``
method; the replay metrics use it automatically on columnar logs.
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np

from .records import (
    DegenerateInputError,
    ImpressionRecord,
    LogColumns,
    ScoredLabel,
)

_CHUNK = 262144  # rows per vectorized selection chunk


def auc(items: Sequence[ScoredLabel]) -> float:
    """Probability that a random positive outranks a random negative (ties 0.5).

    Raises DegenerateInputError when the input contains a single class.
    """
    scores = np.asarray([it.score for it in items], dtype=np.float64)
    labels = np.asarray([it.label for it in items], dtype=np.int64)
    return _auc_arrays(scores, labels)


def _auc_arrays(scores: np.ndarray, labels: np.ndarray) -> float:
    if not np.isfinite(scores).all():
        raise DegenerateInputError("non-finite score in AUC input")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("AUC needs at least one positive and one negative")
    # Midranks via two-sided searchsorted: rank-sum with exact tie handling.
    order = np.sort(scores)
    ranks = (np.searchsorted(order, scores, side="left")
             + np.searchsorted(order, scores, side="right") + 1) / 2.0
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_scores(scores, labels) -> float:
    """Array variant of :func:`auc` for large evaluation sets."""
    return _auc_arrays(np.asarray(scores, dtype=np.float64),
                       np.asarray(labels, dtype=np.int64))


def gauc_scores(scores, labels, groups) -> float:
    """Array variant of :func:`gauc`; ``groups`` holds per-item group keys."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    groups = np.asarray(groups)
    order = np.argsort(groups, kind="stable")
    sorted_groups = groups[order]
    starts = np.r_[0, np.flatnonzero(sorted_groups[1:] != sorted_groups[:-1]) + 1,
                   len(groups)]
    num = 0.0
    den = 0
    for s, e in zip(starts[:-1], starts[1:]):
        idx = order[s:e]
        pos = int(labels[idx].sum())
        if 0 < pos < len(idx):
            num += len(idx) * _auc_arrays(scores[idx], labels[idx])
            den += len(idx)
    if den == 0:
        raise DegenerateInputError("GAUC: no group contains both classes")
    return num / den


def gauc(items: Sequence[ScoredLabel]) -> float:
    """Impression-weighted mean of per-group AUC over groups with both classes.

    Groups containing a single class are excluded from numerator and
    denominator. Raises DegenerateInputError when no group qualifies.
    """
    groups: dict[object, list[ScoredLabel]] = {}
    for it in items:
        groups.setdefault(it.group_key, []).append(it)
    num = 0.0
    den = 0
    for members in groups.values():
        labels = [it.label for it in members]
        if 0 < sum(labels) < len(labels):
            num += len(members) * auc(members)
            den += len(members)
    if den == 0:
        raise DegenerateInputError("GAUC: no group contains both classes")
    return num / den


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation; raises on length < 2 or zero variance."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise DegenerateInputError("pearson needs two equal-length series of >= 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInputError("pearson undefined for zero-variance series")
    return float(xc @ yc) / (sx * sy)


# ---------------------------------------------------------------------------
# Replay metrics (sCTR / NSCTR)
# ---------------------------------------------------------------------------

def _pick_record(ranker, rec: ImpressionRecord) -> int:
    """Argmax creative for one record; ties go to the lowest candidate index."""
    best_id = None
    best = -math.inf
    for cid in rec.candidate_creative_ids:
        s = float(ranker(rec, cid))
        if not math.isfinite(s):
            raise ValueError(f"ranker produced non-finite score {s!r} for creative {cid}")
        if s > best:
            best, best_id = s, cid
    return best_id


def selected_creatives(log, ranker) -> np.ndarray:
    """Top-1 creative per impression according to ``ranker``."""
    if isinstance(log, LogColumns) and hasattr(ranker, "score_many"):
        return _select_columns(log, ranker)
    records = log.to_records() if isinstance(log, LogColumns) else log
    return np.asarray([_pick_record(ranker, r) for r in records], dtype=np.int64)


def _select_columns(cols: LogColumns, ranker) -> np.ndarray:
    ads = np.asarray(sorted(cols.candidates), dtype=np.int64)
    max_n = max(len(v) for v in cols.candidates.values())
    cand_mat = np.full((len(ads), max_n), -1, dtype=np.int64)
    for i, a in enumerate(ads.tolist()):
        row = cols.candidates[a]
        cand_mat[i, : len(row)] = row
    ad_idx = np.searchsorted(ads, cols.ad_id)
    chosen = np.empty(len(cols), dtype=np.int64)
    for lo in range(0, len(cols), _CHUNK):
        hi = min(lo + _CHUNK, len(cols))
        cands = cand_mat[ad_idx[lo:hi]]                  # (B, max_n)
        mask = cands >= 0
        users = np.broadcast_to(cols.user_id[lo:hi, None], cands.shape)
        ads_b = np.broadcast_to(cols.ad_id[lo:hi, None], cands.shape)
        scores = np.full(cands.shape, -np.inf, dtype=np.float64)
        s = ranker.score_many(users[mask], ads_b[mask], cands[mask])
        s = np.asarray(s, dtype=np.float64)
        if not np.isfinite(s).all():
            raise ValueError("ranker produced non-finite scores")
        scores[mask] = s
        pick = scores.argmax(axis=1)                     # first max wins: lowest index
        chosen[lo:hi] = cands[np.arange(hi - lo), pick]
    return chosen


def _replay_counts(log, ranker):
    """Per-ad (impressions, matched impressions, matched clicks) counts."""
    cols = log if isinstance(log, LogColumns) else None
    if cols is not None and hasattr(ranker, "score_many"):
        chosen = _select_columns(cols, ranker)
        ad_id, shown, click = cols.ad_id, cols.shown_creative_id, cols.click
    else:
        records = log.to_records() if isinstance(log, LogColumns) else list(log)
        if not records:
            raise DegenerateInputError("empty impression log")
        chosen = np.asarray([_pick_record(ranker, r) for r in records], dtype=np.int64)
        ad_id = np.asarray([r.ad_id for r in records], dtype=np.int64)
        shown = np.asarray([r.shown_creative_id for r in records], dtype=np.int64)
        click = np.asarray([r.click for r in records], dtype=np.int64)
    if len(ad_id) == 0:
        raise DegenerateInputError("empty impression log")
    matched = chosen == shown
    ads, inv = np.unique(ad_id, return_inverse=True)
    imp = np.bincount(inv, minlength=len(ads))
    imp_s = np.bincount(inv, weights=matched, minlength=len(ads)).astype(np.int64)
    clk_s = np.bincount(inv, weights=matched & (click == 1), minlength=len(ads)).astype(np.int64)
    return ads, imp.astype(np.int64), imp_s, clk_s


def sctr(log, ranker) -> float:
    """Simulated CTR: click rate over impressions where the ranker's top-1
    creative matches the one shown online.

    Raises DegenerateInputError when no impression matches.
    """
    _, _, imp_s, clk_s = _replay_counts(log, ranker)
    total_matched = int(imp_s.sum())
    if total_matched == 0:
        raise DegenerateInputError("sCTR: no impression matched the ranker's choice")
    return int(clk_s.sum()) / total_matched


def nsctr(log, ranker, unmatched_ads: str = "skip") -> float:
    """Normalized sCTR: per-ad matched clicks rescaled back to the ad's full
    impression weight, summed, divided by total impressions.

    ``unmatched_ads`` controls ads whose matched-impression count is zero
    (the rescale factor is undefined there):

    - ``"skip"`` (default): exclude the ad's impressions from numerator and
      denominator;
    - ``"impute"``: count the ad with the overall log CTR.
    """
    if unmatched_ads not in ("skip", "impute"):
        raise ValueError(f"unknown unmatched_ads policy {unmatched_ads!r}")
    ads, imp, imp_s, clk_s = _replay_counts(log, ranker)
    num = Fraction(0)
    den = 0
    total_imp = int(imp.sum())
    total_clk = _total_clicks(log)
    for i in range(len(ads)):
        if imp_s[i] == 0:
            if unmatched_ads == "impute":
                num += Fraction(total_clk * int(imp[i]), total_imp)
                den += int(imp[i])
            continue
        num += Fraction(int(clk_s[i]) * int(imp[i]), int(imp_s[i]))
        den += int(imp[i])
    if den == 0:
        raise DegenerateInputError("NSCTR: no ad has a matched impression")
    return float(num / den)


def _total_clicks(log) -> int:
    if isinstance(log, LogColumns):
        return int(log.click.sum())
    return sum(r.click for r in log)


def log_ctr(log) -> float:
    """Plain CTR of the log (aCTR)."""
    if isinstance(log, LogColumns):
        n = len(log)
        clicks = int(log.click.sum())
    else:
        n = len(log)
        clicks = sum(r.click for r in log)
    if n == 0:
        raise DegenerateInputError("empty impression log")
    return clicks / n


def replay_report(log, ranker, unmatched_ads: str = "skip") -> dict:
    """Flat metric report for one ranker over one log.

    Values come with support counts so low-support numbers can be flagged.
    AUC/GAUC score each impression by the ranker's score of the shown
    creative (min-max normalized into [0,1]; AUC is invariant to that).
    """
    ads, imp, imp_s, clk_s = _replay_counts(log, ranker)
    total_imp = int(imp.sum())
    matched = int(imp_s.sum())
    unmatched = int((imp_s == 0).sum())
    report: dict = {
        "impressions": total_imp,
        "clicks": _total_clicks(log),
        "log_ctr": log_ctr(log),
        "ads": len(ads),
        "sctr_matched_impressions": matched,
        "nsctr_unmatched_ads": unmatched,
        "nsctr_unmatched_policy": unmatched_ads,
    }
    report["sctr"] = sctr(log, ranker) if matched > 0 else None
    report["nsctr"] = nsctr(log, ranker, unmatched_ads) if matched > 0 else None

    scores, labels, users = _shown_score_arrays(log, ranker)
    try:
        report["auc"] = auc_scores(scores, labels)
    except DegenerateInputError:
        report["auc"] = None
    try:
        report["gauc"] = gauc_scores(scores, labels, users)
    except DegenerateInputError:
        report["gauc"] = None
    return report


def _shown_scored_labels(log, ranker) -> list[ScoredLabel]:
    scores, labels, users = _shown_score_arrays(log, ranker)
    return [
        ScoredLabel(float(s), int(y), int(u))
        for s, y, u in zip(scores, labels, users)
    ]


def _shown_score_arrays(log, ranker):
    """Min-max-normalized ranker scores of the shown creatives, with labels
    and user group keys."""
    if isinstance(log, LogColumns) and hasattr(ranker, "score_many"):
        raw = np.asarray(
            ranker.score_many(log.user_id, log.ad_id, log.shown_creative_id),
            dtype=np.float64,
        )
        labels = log.click
        users = log.user_id
    else:
        records = log.to_records() if isinstance(log, LogColumns) else list(log)
        raw = np.asarray([ranker(r, r.shown_creative_id) for r in records], dtype=np.float64)
        labels = np.asarray([r.click for r in records])
        users = np.asarray([r.user_id for r in records])
    lo, hi = float(raw.min()), float(raw.max())
    norm = np.full_like(raw, 0.5) if hi == lo else (raw - lo) / (hi - lo)
    return norm, np.asarray(labels, dtype=np.int64), np.asarray(users)
