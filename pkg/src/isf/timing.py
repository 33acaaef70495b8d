"""Per-operation timing records, CSV serialization, and cross-rank stats."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

CSV_COLUMNS = ["run_id", "rank", "op", "component", "iter", "bytes", "micros", "warmup"]


@dataclass(frozen=True)
class TimingRecord:
    run_id: str
    rank: int
    op: str
    component: str
    iter: int
    bytes: int
    micros: int
    warmup: bool = False

    def row(self) -> list:
        return [self.run_id, self.rank, self.op, self.component,
                self.iter, self.bytes, self.micros, int(self.warmup)]


class TimingSink:
    """Collects TimingRecords for one rank; the loop sets the iteration phase."""

    def __init__(self, run_id: str, rank: int):
        self.run_id = run_id
        self.rank = rank
        self.records: list[TimingRecord] = []
        self._iter = 0
        self._warmup = False

    def set_phase(self, iteration: int, warmup: bool) -> None:
        self._iter = iteration
        self._warmup = warmup

    def add(self, op: str, component: str, nbytes: int, micros: int) -> None:
        if micros <= 0:
            micros = 1  # clock resolution floor; records require micros > 0
        self.records.append(TimingRecord(
            self.run_id, self.rank, op, component, self._iter, nbytes, micros, self._warmup
        ))

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.records:
                w.writerow(r.row())


def read_csv(path: str | Path) -> list[TimingRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV schema {reader.fieldnames} in {path}")
        for row in reader:
            out.append(TimingRecord(
                row["run_id"], int(row["rank"]), row["op"], row["component"],
                int(row["iter"]), int(row["bytes"]), int(row["micros"]),
                bool(int(row["warmup"])),
            ))
    return out


def merge_csvs(paths: list[str | Path], out_path: str | Path) -> int:
    """Deterministic merge: rows sorted by (run_id, rank, iter, component, op)."""
    rows = []
    for p in paths:
        rows.extend(read_csv(p))
    rows.sort(key=lambda r: (r.run_id, r.rank, r.iter, r.component, r.op, r.micros))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.row())
    return len(rows)


@dataclass(frozen=True)
class OpStats:
    """Cross-rank stats of per-rank totals for one component (non-warmup only)."""

    component: str
    mean_sec: float
    std_sec: float
    n_ranks: int
    total_bytes: int
    n_ops: int

    @property
    def throughput_mb_s(self) -> float:
        per_rank_bytes = self.total_bytes / self.n_ranks if self.n_ranks else 0.0
        return per_rank_bytes / self.mean_sec / 1e6 if self.mean_sec > 0 else 0.0

    @property
    def mean_op_micros(self) -> float:
        per_rank_ops = self.n_ops / self.n_ranks if self.n_ranks else 0.0
        return self.mean_sec * 1e6 / per_rank_ops if per_rank_ops else 0.0


def aggregate(records: list[TimingRecord], include_warmup: bool = False) -> dict[str, OpStats]:
    """Per-rank totals per component, then mean/std (population) across ranks."""
    per_rank: dict[str, dict[int, float]] = {}
    bytes_total: dict[str, int] = {}
    ops_total: dict[str, int] = {}
    for r in records:
        if r.warmup and not include_warmup:
            continue
        per_rank.setdefault(r.component, {}).setdefault(r.rank, 0.0)
        per_rank[r.component][r.rank] += r.micros / 1e6
        bytes_total[r.component] = bytes_total.get(r.component, 0) + r.bytes
        ops_total[r.component] = ops_total.get(r.component, 0) + 1
    out: dict[str, OpStats] = {}
    for comp, totals in per_rank.items():
        vals = list(totals.values())
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        out[comp] = OpStats(comp, mean, math.sqrt(var), len(vals),
                            bytes_total[comp], ops_total[comp])
    return out
