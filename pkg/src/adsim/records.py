"""Impression records, scored labels, and the line-delimited log format.

The on-disk log format is JSON lines, one impression per line, with stable
field names::

    {"user_id": 17, "ad_id": 3, "creative_id": 3002,
     "candidates": [3000, 3001, 3002], "click": 1, "cpc_bid": 0.42}

``creative_id`` is the creative shown online; ``candidates`` is the full
candidate bundle of the ad at impression time.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np


class DegenerateInputError(ValueError):
    """A metric has no defined value for this input (e.g. single-class AUC)."""


class InvalidRecordError(ValueError):
    """An impression record violates its invariants."""


@dataclass(slots=True)
class ScoredLabel:
    """One (prediction, click) pair; ``group_key`` partitions items for GAUC."""

    score: float
    label: int
    group_key: object = None

    def validate(self) -> None:
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise InvalidRecordError(f"score must be finite in [0,1], got {self.score!r}")
        if self.label not in (0, 1):
            raise InvalidRecordError(f"label must be 0 or 1, got {self.label!r}")


@dataclass(slots=True)
class ImpressionRecord:
    """One logged exposure: who saw which creative of which ad, and the click."""

    user_id: int
    ad_id: int
    shown_creative_id: int
    candidate_creative_ids: tuple
    click: int
    cpc_bid: float = 0.0

    def validate(self, max_candidates: int = 20) -> None:
        cands = self.candidate_creative_ids
        if not cands:
            raise InvalidRecordError("candidate list must be non-empty")
        if len(set(cands)) != len(cands):
            raise InvalidRecordError(f"duplicate candidates for ad {self.ad_id}")
        if not 1 <= len(cands) <= max_candidates:
            raise InvalidRecordError(f"candidate count {len(cands)} outside [1,{max_candidates}]")
        if self.shown_creative_id not in cands:
            raise InvalidRecordError(
                f"shown creative {self.shown_creative_id} not among candidates of ad {self.ad_id}"
            )
        if self.click not in (0, 1):
            raise InvalidRecordError(f"click must be 0 or 1, got {self.click!r}")


class LogColumns:
    """Columnar view of an impression log.

    Equivalent to a list of :class:`ImpressionRecord` but stored as numpy
    arrays, so replay metrics over multi-million-record logs stay fast.
    ``candidates`` maps each ad id to its (shared) candidate tuple.
    """

    def __init__(self, user_id, ad_id, shown_creative_id, click, cpc_bid,
                 candidates: dict[int, tuple]):
        n = len(user_id)
        self.user_id = np.asarray(user_id, dtype=np.int64)
        self.ad_id = np.asarray(ad_id, dtype=np.int64)
        self.shown_creative_id = np.asarray(shown_creative_id, dtype=np.int64)
        self.click = np.asarray(click, dtype=np.int64)
        self.cpc_bid = np.asarray(cpc_bid, dtype=np.float64)
        self.candidates = candidates
        for arr in (self.ad_id, self.shown_creative_id, self.click, self.cpc_bid):
            if len(arr) != n:
                raise InvalidRecordError("column lengths differ")

    def __len__(self) -> int:
        return len(self.user_id)

    def to_records(self) -> list[ImpressionRecord]:
        cands = self.candidates
        return [
            ImpressionRecord(int(u), int(a), int(s), cands[int(a)], int(y), float(b))
            for u, a, s, y, b in zip(
                self.user_id.tolist(), self.ad_id.tolist(),
                self.shown_creative_id.tolist(), self.click.tolist(),
                self.cpc_bid.tolist(),
            )
        ]

    @classmethod
    def from_records(cls, records: Sequence[ImpressionRecord]) -> "LogColumns":
        candidates: dict[int, tuple] = {}
        for r in records:
            prev = candidates.setdefault(int(r.ad_id), tuple(r.candidate_creative_ids))
            if prev != tuple(r.candidate_creative_ids):
                raise InvalidRecordError(f"ad {r.ad_id} has inconsistent candidate sets")
        return cls(
            [r.user_id for r in records],
            [r.ad_id for r in records],
            [r.shown_creative_id for r in records],
            [r.click for r in records],
            [r.cpc_bid for r in records],
            candidates,
        )


def as_columns(log) -> LogColumns:
    """Coerce a record list or LogColumns to columnar form."""
    if isinstance(log, LogColumns):
        return log
    return LogColumns.from_records(list(log))


def write_log(records: Iterable[ImpressionRecord], path) -> int:
    """Write impressions as JSON lines; returns the record count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "user_id": r.user_id,
                "ad_id": r.ad_id,
                "creative_id": r.shown_creative_id,
                "candidates": list(r.candidate_creative_ids),
                "click": r.click,
                "cpc_bid": r.cpc_bid,
            }) + "\n")
            n += 1
    return n


def read_log(path, validate: bool = True) -> list[ImpressionRecord]:
    """Read a JSON-lines impression log."""
    out = []
    shared: dict[tuple, tuple] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                cands = tuple(d["candidates"])
                cands = shared.setdefault(cands, cands)
                rec = ImpressionRecord(
                    d["user_id"], d["ad_id"], d["creative_id"],
                    cands, d["click"], float(d.get("cpc_bid", 0.0)),
                )
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise InvalidRecordError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if validate:
                rec.validate()
            out.append(rec)
    return out


def iter_log(path) -> Iterator[ImpressionRecord]:
    """Stream records from a JSON-lines log without materializing the list."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                yield ImpressionRecord(
                    d["user_id"], d["ad_id"], d["creative_id"],
                    tuple(d["candidates"]), d["click"], float(d.get("cpc_bid", 0.0)),
                )


def write_log_columns(path, log: LogColumns) -> int:
    """Write a columnar log as the same JSON-lines format as write_log."""
    cands = {a: list(c) for a, c in log.candidates.items()}
    with open(path, "w", encoding="utf-8") as fh:
        for u, a, s, y, b in zip(log.user_id.tolist(), log.ad_id.tolist(),
                                 log.shown_creative_id.tolist(),
                                 log.click.tolist(), log.cpc_bid.tolist()):
            fh.write(json.dumps({
                "user_id": u, "ad_id": a, "creative_id": s,
                "candidates": cands[a], "click": y, "cpc_bid": b,
            }) + "\n")
    return len(log)


def read_log_columns(path) -> LogColumns:
    """Read a JSON-lines impression log into columnar form."""
    users, ads, shown, clicks, bids = [], [], [], [], []
    candidates: dict[int, tuple] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                a = int(d["ad_id"])
                cands = tuple(d["candidates"])
                prev = candidates.setdefault(a, cands)
                if prev != cands:
                    raise InvalidRecordError(f"ad {a} has inconsistent candidate sets")
                users.append(d["user_id"])
                ads.append(a)
                shown.append(d["creative_id"])
                clicks.append(d["click"])
                bids.append(float(d.get("cpc_bid", 0.0)))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise InvalidRecordError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return LogColumns(users, ads, shown, clicks, bids, candidates)
