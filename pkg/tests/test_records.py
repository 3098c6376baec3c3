import json

import numpy as np
import pytest

from adsim.records import (
    ImpressionRecord,
    InvalidRecordError,
    LogColumns,
    ScoredLabel,
    as_columns,
    iter_log,
    read_log,
    read_log_columns,
    write_log,
    write_log_columns,
)


def make_records():
    cands = {1: (100, 101), 2: (200, 201, 202)}
    return [
        ImpressionRecord(0, 1, 100, cands[1], 1, 0.5),
        ImpressionRecord(1, 1, 101, cands[1], 0, 0.25),
        ImpressionRecord(2, 2, 202, cands[2], 0, 1.0),
        ImpressionRecord(0, 2, 200, cands[2], 1, 0.75),
    ]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def test_scored_label_validation():
    ScoredLabel(0.5, 1, "g").validate()
    with pytest.raises(InvalidRecordError):
        ScoredLabel(1.5, 1).validate()
    with pytest.raises(InvalidRecordError):
        ScoredLabel(float("nan"), 0).validate()
    with pytest.raises(InvalidRecordError):
        ScoredLabel(0.5, 2).validate()


def test_impression_record_validation():
    ImpressionRecord(0, 1, 100, (100, 101), 1, 0.1).validate()
    with pytest.raises(InvalidRecordError):
        ImpressionRecord(0, 1, 100, (), 1).validate()
    with pytest.raises(InvalidRecordError):
        ImpressionRecord(0, 1, 100, (100, 100), 1).validate()
    with pytest.raises(InvalidRecordError):
        ImpressionRecord(0, 1, 999, (100, 101), 1).validate()
    with pytest.raises(InvalidRecordError):
        ImpressionRecord(0, 1, 100, (100, 101), 3).validate()
    with pytest.raises(InvalidRecordError):
        ImpressionRecord(0, 1, 100, tuple(range(100, 125)), 1).validate(max_candidates=20)


# ---------------------------------------------------------------------------
# Columnar conversion
# ---------------------------------------------------------------------------

def test_log_columns_round_trip():
    records = make_records()
    cols = LogColumns.from_records(records)
    assert len(cols) == len(records)
    assert cols.candidates == {1: (100, 101), 2: (200, 201, 202)}
    assert cols.to_records() == records
    # as_columns passes columnar input through untouched
    assert as_columns(cols) is cols
    assert as_columns(records).to_records() == records


def test_inconsistent_candidates_rejected():
    records = make_records()
    records.append(ImpressionRecord(3, 1, 100, (100, 101, 102), 0, 0.1))
    with pytest.raises(InvalidRecordError):
        LogColumns.from_records(records)


def test_mismatched_column_lengths_rejected():
    with pytest.raises(InvalidRecordError):
        LogColumns([0, 1], [1, 1], [100], [0, 1], [0.1, 0.2], {1: (100,)})


# ---------------------------------------------------------------------------
# JSON-lines serialization
# ---------------------------------------------------------------------------

def test_write_read_log_round_trip(tmp_path):
    records = make_records()
    path = tmp_path / "log.jsonl"
    assert write_log(records, path) == len(records)
    assert read_log(path) == records
    assert list(iter_log(path)) == records
    # spot-check the wire format
    first = json.loads(path.read_text().splitlines()[0])
    assert first == {"user_id": 0, "ad_id": 1, "creative_id": 100,
                     "candidates": [100, 101], "click": 1, "cpc_bid": 0.5}


def test_columnar_write_read_round_trip(tmp_path):
    cols = LogColumns.from_records(make_records())
    path = tmp_path / "log.jsonl"
    assert write_log_columns(path, cols) == len(cols)
    back = read_log_columns(path)
    assert np.array_equal(back.user_id, cols.user_id)
    assert np.array_equal(back.ad_id, cols.ad_id)
    assert np.array_equal(back.shown_creative_id, cols.shown_creative_id)
    assert np.array_equal(back.click, cols.click)
    assert np.array_equal(back.cpc_bid, cols.cpc_bid)
    assert back.candidates == cols.candidates
    # both writers emit identical bytes for the same log
    alt = tmp_path / "alt.jsonl"
    write_log(cols.to_records(), alt)
    assert alt.read_bytes() == path.read_bytes()


def test_read_log_rejects_malformed_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"user_id": 0, "ad_id": 1}\n')
    with pytest.raises(InvalidRecordError):
        read_log(path)
    with pytest.raises(InvalidRecordError):
        read_log_columns(path)
    path.write_text("not json\n")
    with pytest.raises(InvalidRecordError):
        read_log(path)


def test_read_log_validates_records(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"user_id": 0, "ad_id": 1, "creative_id": 999,
                                "candidates": [100, 101], "click": 1,
                                "cpc_bid": 0.1}) + "\n")
    with pytest.raises(InvalidRecordError):
        read_log(path)
    # validation can be skipped for raw inspection
    assert len(read_log(path, validate=False)) == 1


def test_read_log_columns_rejects_inconsistent_candidates(tmp_path):
    path = tmp_path / "bad.jsonl"
    lines = [
        {"user_id": 0, "ad_id": 1, "creative_id": 100,
         "candidates": [100, 101], "click": 0, "cpc_bid": 0.1},
        {"user_id": 1, "ad_id": 1, "creative_id": 100,
         "candidates": [100, 102], "click": 0, "cpc_bid": 0.1},
    ]
    path.write_text("".join(json.dumps(d) + "\n" for d in lines))
    with pytest.raises(InvalidRecordError):
        read_log_columns(path)


def test_blank_lines_are_skipped(tmp_path):
    records = make_records()
    path = tmp_path / "log.jsonl"
    write_log(records, path)
    padded = tmp_path / "padded.jsonl"
    padded.write_text("\n" + path.read_text() + "\n\n")
    assert read_log(padded) == records
    assert len(read_log_columns(padded)) == len(records)
