from __future__ import annotations

import csv
import math
from pathlib import Path

import pytest

from isf.timing import CSV_COLUMNS, OpStats, TimingRecord, TimingSink, aggregate, merge_csvs, read_csv


def make_records() -> list[TimingRecord]:
    records = []
    for rank in range(4):
        for it in range(12):
            warm = it < 2
            records.append(TimingRecord("r1", rank, "put_tensor", "send", it,
                                        262144, 1000 + rank * 10 + it, warm))
            records.append(TimingRecord("r1", rank, "get_tensor", "retrieve", it,
                                        262144, 900 + rank * 5, warm))
    return records


def test_aggregate_matches_independent_recompute():
    records = make_records()
    stats = aggregate(records)
    # independent recompute with plain dict/loops (the stats-law oracle)
    per_rank: dict[str, dict[int, float]] = {}
    for r in records:
        if r.warmup:
            continue
        per_rank.setdefault(r.component, {}).setdefault(r.rank, 0.0)
        per_rank[r.component][r.rank] += r.micros / 1e6
    for comp, totals in per_rank.items():
        vals = list(totals.values())
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        assert math.isclose(stats[comp].mean_sec, mean, rel_tol=1e-9)
        assert math.isclose(stats[comp].std_sec, math.sqrt(var), rel_tol=1e-9, abs_tol=1e-15)


def test_warmup_exclusion_changes_mean():
    records = []
    for it in range(5):
        # deliberately slow first iteration
        micros = 100000 if it == 0 else 100
        records.append(TimingRecord("r", 0, "op", "send", it, 8, micros, it == 0))
    without = aggregate(records)["send"].mean_sec
    with_warm = aggregate(records, include_warmup=True)["send"].mean_sec
    assert with_warm > without * 10


def test_throughput_and_mean_op():
    records = [TimingRecord("r", 0, "put_tensor", "send", i, 1000, 500, False)
               for i in range(10)]
    s = aggregate(records)["send"]
    assert s.mean_sec == pytest.approx(10 * 500 / 1e6)
    assert s.mean_op_micros == pytest.approx(500)
    assert s.throughput_mb_s == pytest.approx(10 * 1000 / s.mean_sec / 1e6)


def test_sink_csv_roundtrip(tmp_path: Path):
    sink = TimingSink("run-x", 2)
    sink.set_phase(0, True)
    sink.add("put_tensor", "send", 1024, 111)
    sink.set_phase(1, False)
    sink.add("get_tensor", "retrieve", 1024, 222)
    path = tmp_path / "out.csv"
    sink.write_csv(path)
    back = read_csv(path)
    assert back == sink.records
    assert back[0].warmup and not back[1].warmup


def test_micros_floor_positive(tmp_path: Path):
    sink = TimingSink("r", 0)
    sink.add("op", "send", 0, 0)
    assert sink.records[0].micros == 1


def test_merge_deterministic_and_counts(tmp_path: Path):
    a, b = TimingSink("r", 0), TimingSink("r", 1)
    for i in range(5):
        a.set_phase(i, False)
        a.add("put_tensor", "send", 10, 100 + i)
        b.set_phase(i, False)
        b.add("put_tensor", "send", 10, 200 + i)
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_csv(pa)
    b.write_csv(pb)
    m1, m2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
    assert merge_csvs([pa, pb], m1) == 10
    assert merge_csvs([pb, pa], m2) == 10  # input order must not matter
    assert m1.read_bytes() == m2.read_bytes()


def test_read_csv_rejects_schema_drift(tmp_path: Path):
    path = tmp_path / "bad.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["nope"] + CSV_COLUMNS[1:])
        w.writerow(["x"] * len(CSV_COLUMNS))
    with pytest.raises(ValueError, match="schema"):
        read_csv(path)
