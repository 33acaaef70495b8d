"""Acceptance suite: every gated criterion at its stated tolerance.

Experiment-backed criteria run the corresponding sweep at its `quick`
profile (thresholds come from the same spec file as the full runs, only the
iteration counts and sweep extents shrink to respect the stated runtime
caps). Each criterion prints one [PASS]/[FAIL] line.
"""

from __future__ import annotations

import math
import struct
import subprocess
import sys
import threading
import time

import numpy as np
import pytest

from isf import executors as ex
from isf import wire
from isf.bench import load_experiment, run_experiment
from isf.client import ClientConfig, connect
from isf.metrics import relative_frobenius
from isf.store import ServerConfig, StoreServer
from isf.timing import TimingSink
from isf.wire import Command, Dtype, Frame, FrameDecoder, Tensor


def report_line(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def bench_reports(tmp_path_factory):
    """One quick-profile run per gated experiment, shared across criteria."""
    out = tmp_path_factory.mktemp("acceptance")
    reports = {}
    for exp_id in ("E2", "E3", "E4", "E5", "E6"):
        exp = load_experiment(exp_id)
        reports[exp_id] = run_experiment(exp, out, profile="quick", timeout_s=540)
    return reports


def verdicts_of(report: dict) -> dict[str, dict]:
    return {v["name"]: v for v in report["verdicts"]}


# --- criterion 1: codec goldens + randomized identity --------------------------------

def test_codec_goldens_and_randomized_identity():
    t0 = time.monotonic()
    assert wire.encode_tensor(Tensor(Dtype.F32, (1,), struct.pack("<f", 1.0))) == bytes(
        [0x00, 0x01, 1, 0, 0, 0, 0, 0, 0, 0, 0x00, 0x00, 0x80, 0x3F])
    assert wire.encode_tensor(Tensor(Dtype.U8, (3,), bytes([7, 8, 9]))) == bytes(
        [0x04, 0x01, 3, 0, 0, 0, 0, 0, 0, 0, 7, 8, 9])
    assert wire.encode_frame(Frame(Command.PING, 7)) == bytes(
        [0x0A, 0, 0, 0, 0x01, 0x01, 0x07, 0, 0, 0, 0, 0, 0, 0])

    rng = np.random.default_rng(12345)
    dtypes = list(Dtype)
    n_tensors = 10000
    for i in range(n_tensors):
        dtype = dtypes[int(rng.integers(0, len(dtypes)))]
        rank = int(rng.integers(1, 9))
        shape = tuple(int(rng.integers(1, 4)) for _ in range(rank))
        n = int(np.prod(shape)) * wire.element_size(dtype)
        t = Tensor(dtype, shape, rng.bytes(n))
        assert wire.decode_tensor(wire.encode_tensor(t)) == t

    n_frames = 10000
    commands = list(Command)
    for i in range(n_frames):
        f = Frame(commands[int(rng.integers(0, len(commands)))],
                  int(rng.integers(0, 2**63)),
                  rng.bytes(int(rng.integers(0, 128))))
        dec = FrameDecoder()
        dec.feed(wire.encode_frame(f))
        assert dec.next_frame() == f

    elapsed = time.monotonic() - t0
    report_line("codec_goldens_and_identity", elapsed < 10,
                f"{n_tensors} tensors + {n_frames} frames bit-exact in {elapsed:.1f}s (< 10s)")


# --- criterion 2: store linearizability + bytes accounting ---------------------------

def test_store_linearizable_stress_and_bytes_oracle():
    t0 = time.monotonic()
    proc = subprocess.Popen(
        [sys.executable, "-m", "isf.cli.store", "--bind", "127.0.0.1:0", "--quiet"],
        stdout=subprocess.PIPE, text=True)
    try:
        ready = proc.stdout.readline()
        assert ready.startswith("READY ")
        addr = ready.split()[1]

        ops_per_conn = 10000
        n_pairs = 4
        published = [0] * n_pairs
        violations: list[str] = []
        errors: list[Exception] = []

        def writer(idx: int) -> None:
            try:
                with connect(ClientConfig(mode="colocated", address=addr)) as c:
                    for v in range(1, ops_per_conn + 1):
                        t = Tensor(Dtype.I64, (2,),
                                   np.array([v, idx], dtype="<i8").tobytes())
                        c.put_tensor(f"lin.{idx}", t)
                        published[idx] = v  # only after the response arrived
            except Exception as exc:
                errors.append(exc)

        def reader(idx: int) -> None:
            try:
                with connect(ClientConfig(mode="colocated", address=addr)) as c:
                    key = f"lin.{idx}"
                    while not c.tensor_exists(key):
                        time.sleep(0.001)
                    last = 0
                    for _ in range(ops_per_conn):
                        v_before = published[idx]
                        got = c.get_tensor(key)
                        v = int(np.frombuffer(got.data, "<i8")[0])
                        if v < v_before:
                            violations.append(f"key {key}: read {v} after {v_before} completed")
                        if v < last:
                            violations.append(f"key {key}: reads went backwards {last}->{v}")
                        last = v
            except Exception as exc:
                errors.append(exc)

        threads = [threading.Thread(target=writer, args=(i,)) for i in range(n_pairs)]
        threads += [threading.Thread(target=reader, args=(i,)) for i in range(n_pairs)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors, errors

        # bytes_used shadow oracle over the same live store
        rng = np.random.default_rng(0)
        shadow: dict[str, int] = {"lin.0": 16, "lin.1": 16, "lin.2": 16, "lin.3": 16}
        with connect(ClientConfig(mode="colocated", address=addr)) as c:
            for _ in range(1000):
                key = f"acct.{int(rng.integers(0, 30))}"
                if rng.random() < 0.7:
                    n = int(rng.integers(1, 100))
                    c.put_tensor(key, Tensor(Dtype.F32, (n,), bytes(4 * n)))
                    shadow[key] = 4 * n
                elif key in shadow:
                    c.delete_tensor(key)
                    del shadow[key]
            info = c.info()
        oracle_exact = info["bytes_used"] == sum(shadow.values())

        elapsed = time.monotonic() - t0
        ok = not violations and oracle_exact and elapsed < 60
        report_line(
            "store_linearizable_and_accounting", ok,
            f"8 connections x {ops_per_conn} ops, {len(violations)} violations; "
            f"bytes_used {info['bytes_used']} == shadow {sum(shadow.values())}; "
            f"{elapsed:.1f}s (< 60s)")
    finally:
        proc.terminate()
        proc.wait(timeout=10)


# --- criterion 3: executor oracle equivalence ------------------------------------------

def _naive_forward(layers, X: np.ndarray) -> np.ndarray:
    X = X.astype(np.float32, copy=True)
    for W, b, act in layers:
        n, din = X.shape
        dout = W.shape[0]
        Y = np.zeros((n, dout), dtype=np.float32)
        for i in range(n):
            for j in range(dout):
                acc = np.float32(0.0)
                for k in range(din):
                    acc = np.float32(acc + np.float32(W[j, k] * X[i, k]))
                acc = np.float32(acc + b[j])
                if act == ex.Activation.RELU and acc < 0:
                    acc = np.float32(0.0)
                Y[i, j] = acc
        X = Y
    return X


def test_executor_oracle_equivalence_and_networked_identity():
    t0 = time.monotonic()
    rng = np.random.default_rng(777)
    n_models = 1000
    mismatches = 0
    keep: list[tuple[bytes, np.ndarray, bytes]] = []
    for i in range(n_models):
        din = int(rng.integers(1, 33))
        dout = int(rng.integers(1, 33))
        n = int(rng.integers(1, 4))
        layers = []
        if rng.random() < 0.5:
            W = rng.standard_normal((dout, din)).astype(np.float32)
            b = rng.standard_normal(dout).astype(np.float32)
            blob = ex.build_affine_blob(W, b)
            layers = [(W, b, ex.Activation.NONE)]
        else:
            dmid = int(rng.integers(1, 33))
            W1 = rng.standard_normal((dmid, din)).astype(np.float32)
            b1 = rng.standard_normal(dmid).astype(np.float32)
            W2 = rng.standard_normal((dout, dmid)).astype(np.float32)
            b2 = rng.standard_normal(dout).astype(np.float32)
            blob = ex.build_mlp_blob([(W1, b1, ex.Activation.RELU),
                                      (W2, b2, ex.Activation.NONE)])
            layers = [(W1, b1, ex.Activation.RELU), (W2, b2, ex.Activation.NONE)]
        X = rng.standard_normal((n, din)).astype(np.float32)
        t = Tensor(Dtype.F32, (n, din), np.ascontiguousarray(X, "<f4").tobytes())
        (got,) = ex.run(ex.parse_model(blob), [t])
        if got.data != _naive_forward(layers, X).tobytes():
            mismatches += 1
        if i % 50 == 0:
            keep.append((blob, X, got.data))

    # networked RUN_MODEL must equal the in-process result bit-exactly
    srv = StoreServer("127.0.0.1", 0, ServerConfig())
    srv.start_background()
    net_mismatches = 0
    try:
        with connect(ClientConfig(mode="colocated", address=srv.address)) as c:
            for i, (blob, X, expected) in enumerate(keep):
                c.set_model(f"m{i}", blob)
                t = Tensor(Dtype.F32, X.shape, np.ascontiguousarray(X, "<f4").tobytes())
                c.put_tensor(f"{i}.in.0", t)
                c.run_model(f"m{i}", [f"{i}.in.0"], [f"{i}.out.0"])
                if c.get_tensor(f"{i}.out.0").data != expected:
                    net_mismatches += 1
    finally:
        srv.shutdown()

    elapsed = time.monotonic() - t0
    ok = mismatches == 0 and net_mismatches == 0 and elapsed < 30
    report_line(
        "executor_oracle_equivalence", ok,
        f"{n_models} models exact-f32 vs oracle ({mismatches} mismatches); "
        f"{len(keep)} networked evals bit-exact ({net_mismatches} mismatches); "
        f"{elapsed:.1f}s (< 30s)")


# --- criterion 4: reconstruction metric ---------------------------------------------

def test_reconstruction_metric_worked_examples_and_scale_invariance():
    e1 = relative_frobenius([(np.ones((2, 2)), np.ones((2, 2)))])
    e2 = relative_frobenius([([[3.0, 4.0]], [[0.0, 0.0]])])
    pair1 = ([[1.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [1.0, 0.0]])
    pair2 = ([[1.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [1.0, 1.0]])
    e3 = relative_frobenius([pair1, pair2])
    exact = abs(e1 - 0.0) <= 1e-12 and abs(e2 - 1.0) <= 1e-12 and abs(e3 - 0.25) <= 1e-12

    rng = np.random.default_rng(31337)
    worst = 0.0
    for _ in range(200):
        alpha = float(10.0 ** rng.uniform(-6, 6)) * (1 if rng.random() < 0.5 else -1)
        f = rng.standard_normal((4, 16))
        g = rng.standard_normal((4, 16))
        base = relative_frobenius([(f, g)])
        scaled = relative_frobenius([(alpha * f, alpha * g)])
        worst = max(worst, abs(base - scaled) / base)
    ok = exact and worst <= 1e-12
    report_line("reconstruction_metric", ok,
                f"worked examples (0.0, 1.0, 0.25) exact to 1e-12; "
                f"scale-invariance worst rel drift {worst:.2e} (<= 1e-12)")


# --- criteria 5-9: experiment-backed ---------------------------------------------------

def test_e2_small_message_floor(bench_reports):
    v = verdicts_of(bench_reports["E2"])
    floor = [v["small_message_floor_send"], v["small_message_floor_retrieve"]]
    mono = [v["payload_monotonicity_send"], v["payload_monotonicity_retrieve"]]
    ok = all(x["status"] == "PASS" for x in floor + mono)
    report_line("e2_small_message_floor", ok,
                f"floor ratios send/retrieve = {floor[0]['measured']}/{floor[1]['measured']} "
                f"(>= {floor[0]['threshold']}); inversions {mono[0]['measured']} | "
                f"{mono[1]['measured']}")


def test_e3_weak_scaling_and_locality(bench_reports):
    v = verdicts_of(bench_reports["E3"])
    loc, eff = v["locality_exact"], v["weak_scaling_efficiency"]
    ok = loc["status"] == "PASS" and eff["status"] == "PASS"
    report_line("e3_colocated_weak_scaling", ok,
                f"locality violations: {loc['measured'] or 'none'}; "
                f"efficiency 1->4 nodes = {eff['measured']} (>= {eff['threshold']})")


def test_e4_clustered_bottleneck_and_proportionality(bench_reports):
    v = verdicts_of(bench_reports["E4"])
    ratio, spread = v["clustered_bottleneck_ratio"], v["shard_proportionality_spread"]
    ok = ratio["status"] == "PASS" and spread["status"] == "PASS"
    report_line("e4_clustered_bottleneck", ok,
                f"latency ratio 8->32 clients = {ratio['measured']} (>= {ratio['threshold']}); "
                f"proportional spread = {spread['measured']} (<= {spread['threshold']})")


def test_e5_strong_scaling(bench_reports):
    v = verdicts_of(bench_reports["E5"])
    mono, floor = v["strong_scaling_monotonic"], v["per_rank_payload_floor"]
    ok = mono["status"] == "PASS" and floor["status"] == "PASS"
    report_line("e5_strong_scaling", ok,
                f"per-rank transfer time {mono['measured']}; payloads {floor['measured']} "
                f"(all >= {floor['threshold']})")


def test_e6_inference_decomposition(bench_reports):
    v = verdicts_of(bench_reports["E6"])
    sums = [x for name, x in v.items() if name.startswith("component_sum[")]
    inline = v["inline_direction"]
    ok = all(x["status"] == "PASS" for x in sums) and inline["status"] == "PASS"
    report_line("e6_inference_decomposition", ok,
                f"component-sum residuals {[x['measured'] for x in sums]} (<= 0.05); "
                f"inline vs networked at n=1: {inline['measured']}")


# --- criterion 10: teardown hygiene -------------------------------------------------

def test_orchestrator_teardown_all_experiments(bench_reports):
    leaked = {}
    bad_accounting = {}
    for exp_id, report in bench_reports.items():
        for p in report["points"]:
            if p.get("orphan_pids"):
                leaked[f"{exp_id}/{p['label']}"] = p["orphan_pids"]
            if not p.get("ok"):
                bad_accounting[f"{exp_id}/{p['label']}"] = p.get("failed") or p.get("error")
    ok = not leaked and not bad_accounting
    report_line("orchestrator_teardown", ok,
                f"orphans: {leaked or 'none'}; failed points: {bad_accounting or 'none'}")
