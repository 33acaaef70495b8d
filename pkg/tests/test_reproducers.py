from __future__ import annotations

import numpy as np
import pytest

from isf import executors as ex
from isf.client import ClientConfig, connect
from isf.reproducers import (
    WorkloadSpec,
    consume,
    infer,
    infer_inline,
    make_payload,
    payload_checksum,
    produce,
)
from isf.timing import TimingSink


def spec(**kw) -> WorkloadSpec:
    base = dict(payload_bytes_per_rank=4096, iterations=4, warmup=1, sleep_ms=1,
                mode="transfer", send_every=1)
    base.update(kw)
    s = WorkloadSpec(**base)
    s.validate()
    return s


def test_workload_spec_rejects_unknown_fields():
    with pytest.raises(ValueError, match="unknown workload fields"):
        WorkloadSpec.from_dict({"payload_bytes_per_rank": 4096, "bogus": 1})


def test_workload_spec_validation():
    with pytest.raises(ValueError):
        spec(iterations=0)
    with pytest.raises(ValueError):
        spec(payload_bytes_per_rank=6)
    with pytest.raises(ValueError):
        spec(mode="nope")


def test_payload_determinism_and_sensitivity():
    a = make_payload(1, 2, 3, 4096)
    b = make_payload(1, 2, 3, 4096)
    assert a.data == b.data
    assert make_payload(1, 2, 4, 4096).data != a.data
    assert make_payload(1, 3, 3, 4096).data != a.data
    assert payload_checksum(a) == payload_checksum(b)


def test_smooth_payload_shape_and_determinism():
    t = make_payload(7, 0, 2, 16384, kind="smooth")
    assert t.shape == (4, 1024)
    assert make_payload(7, 0, 2, 16384, kind="smooth").data == t.data
    arr = t.to_numpy()
    assert float(np.abs(arr).max()) <= 4.0  # sum of 4 unit-amp harmonics


def test_produce_counts_and_csv_rows(store_server):
    srv = store_server()
    sink = TimingSink("run", 0)
    with connect(ClientConfig(mode="colocated", address=srv.address), sink=sink) as c:
        result = produce(spec(iterations=40, warmup=2, sleep_ms=0), c, rank=0,
                         run_seed=9, num_ranks=1)
    assert result.sends == 42  # 40 measured + 2 warmup
    send_rows = [r for r in sink.records if r.component == "send"]
    assert len(send_rows) == 42
    assert len([r for r in send_rows if not r.warmup]) == 40
    retrieve_rows = [r for r in sink.records if r.component == "retrieve" and not r.warmup]
    assert len(retrieve_rows) == 40


def test_produce_send_every_two(store_server):
    srv = store_server()
    with connect(ClientConfig(mode="colocated", address=srv.address)) as c:
        result = produce(spec(iterations=8, warmup=0, send_every=2, sleep_ms=0),
                         c, rank=1, run_seed=9, num_ranks=1)
        assert result.sends == 4  # steps 0,2,4,6
        assert sorted(result.checksums) == ["1.sol.0", "1.sol.2", "1.sol.4", "1.sol.6"]
        assert c.get_meta("step") == 6


def test_produce_publishes_metadata(store_server):
    srv = store_server()
    with connect(ClientConfig(mode="colocated", address=srv.address)) as c:
        produce(spec(iterations=2, warmup=0, sleep_ms=0), c, rank=0, run_seed=1, num_ranks=24)
        assert c.get_meta("num_ranks") == 24
        assert c.get_meta("tensor_size") == 4096
        assert c.get_meta("step") == 1


def test_consumer_gathers_assigned_producers(store_server):
    srv = store_server()
    w = spec(iterations=3, warmup=0, sleep_ms=0)
    addr = ClientConfig(mode="colocated", address=srv.address)
    with connect(addr) as p:
        for rank in range(6):
            produce(w, p, rank=rank, run_seed=4, num_ranks=6)
    sink = TimingSink("run", 0)
    with connect(addr, sink=sink) as c:
        result = consume(spec(iterations=2, warmup=0, sleep_ms=0), c, rank=0, run_seed=4,
                         producer_ranks=list(range(6)), poll_interval_ms=5, poll_max_tries=10)
    assert result.gets == 12  # 6 tensors per epoch, 2 epochs
    retrieves = [r for r in sink.records if r.component == "retrieve"]
    assert len(retrieves) == 12


def test_consumer_detects_corruption(store_server):
    srv = store_server()
    addr = ClientConfig(mode="colocated", address=srv.address)
    with connect(addr) as p:
        produce(spec(iterations=1, warmup=0, sleep_ms=0), p, rank=0, run_seed=4, num_ranks=1)
        # corrupt the stored tensor under the same key
        bad = make_payload(99, 0, 0, 4096)
        p.put_tensor("0.sol.0", bad)
        p.put_meta("step", 0)
    with connect(addr) as c:
        with pytest.raises(RuntimeError, match="verification"):
            consume(spec(iterations=1, warmup=0, sleep_ms=0), c, rank=0, run_seed=4,
                    producer_ranks=[0], poll_interval_ms=5, poll_max_tries=5)


def test_consumer_no_data_times_out(store_server):
    srv = store_server()
    with connect(ClientConfig(mode="colocated", address=srv.address)) as c:
        with pytest.raises(TimeoutError, match="no data"):
            consume(spec(iterations=1, warmup=0, sleep_ms=0), c, rank=0, run_seed=4,
                    producer_ranks=[0], poll_interval_ms=2, poll_max_tries=3)


def test_infer_identity_roundtrip(tmp_path, store_server):
    srv = store_server()
    model = tmp_path / "model.mex"
    model.write_bytes(ex.random_affine_blob(8, 8, seed=3))
    w = spec(mode="inference", iterations=3, warmup=1, sleep_ms=0,
             model_file=str(model), batch_n=4)
    sink = TimingSink("run", 0)
    with connect(ClientConfig(mode="colocated", address=srv.address), sink=sink) as c:
        result = infer(w, c, rank=0, run_seed=5)
    assert result.sends == 4
    comps = [r.component for r in sink.records if not r.warmup]
    for name in ("send", "model_eval", "retrieve", "inference_total"):
        assert comps.count(name) == 3


def test_inline_outputs_equal_networked(tmp_path, store_server):
    srv = store_server()
    model = tmp_path / "model.mex"
    model.write_bytes(ex.random_affine_blob(16, 4, seed=11))
    w = spec(mode="inference", iterations=3, warmup=0, sleep_ms=0,
             model_file=str(model), batch_n=2)
    with connect(ClientConfig(mode="colocated", address=srv.address)) as c:
        networked = infer(w, c, rank=2, run_seed=5)
    inline = infer_inline(w, rank=2, run_seed=5)
    assert networked.checksums == inline.checksums  # bit-identical outputs


def test_infer_total_close_to_component_sum(tmp_path, store_server):
    srv = store_server()
    model = tmp_path / "model.mex"
    model.write_bytes(ex.random_affine_blob(3072, 10, seed=7))
    w = spec(mode="inference", iterations=10, warmup=2, sleep_ms=0,
             model_file=str(model), batch_n=16)
    sink = TimingSink("run", 0)
    with connect(ClientConfig(mode="colocated", address=srv.address), sink=sink) as c:
        infer(w, c, rank=0, run_seed=5)
    rows = [r for r in sink.records if not r.warmup]
    total = sum(r.micros for r in rows if r.component == "inference_total")
    parts = sum(r.micros for r in rows
                if r.component in ("send", "model_eval", "retrieve"))
    assert abs(parts - total) / total < 0.05
