"""Producer, consumer, and inference loops emulating the coupled workloads.

Each rank is an independent process: sleep to emulate compute, exchange
tensors through the store, time every client call. Payloads are
deterministic functions of (run seed, rank, step) so any process can verify
any other's bytes without shipping data.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import executors
from .client import ClientHandle, NotFoundError
from .prng import payload_seed, splitmix64, uniform_f32
from .routing import fnv1a64
from .timing import TimingSink
from .wire import Dtype, Tensor, producer_key

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STORE = 3
EXIT_NO_DATA = 4

SMOOTH_CHANNELS = 4
SMOOTH_HARMONICS = 4


@dataclass
class WorkloadSpec:
    payload_bytes_per_rank: int = 262144
    iterations: int = 40
    warmup: int = 2
    sleep_ms: int = 100
    mode: str = "transfer"  # transfer | inference | train_feed
    send_every: int = 1
    model_file: str | None = None
    batch_n: int = 1
    payload_kind: str = "uniform"  # uniform | smooth
    delete_after_get: bool = False
    train_ms: int | None = None  # consumer epoch emulation; defaults to sleep_ms
    inline: bool = False  # inference mode only: evaluate in-process, no store

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if self.payload_bytes_per_rank % 4 != 0:
            raise ValueError("payload_bytes_per_rank must be a multiple of 4 (F32)")
        if self.send_every < 1:
            raise ValueError("send_every must be >= 1")
        if self.mode not in ("transfer", "inference", "train_feed"):
            raise ValueError(f"unknown workload mode {self.mode!r}")
        if self.batch_n < 1:
            raise ValueError("batch_n must be >= 1")
        if self.payload_kind not in ("uniform", "smooth"):
            raise ValueError(f"unknown payload_kind {self.payload_kind!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown workload fields: {sorted(unknown)}")
        spec = cls(**d)
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


_BASE_BLOCK_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def _base_block(run_seed: int, rank: int, n: int) -> np.ndarray:
    key = (run_seed, rank, n)
    block = _BASE_BLOCK_CACHE.get(key)
    if block is None:
        if len(_BASE_BLOCK_CACHE) > 4:
            _BASE_BLOCK_CACHE.clear()
        block = uniform_f32(payload_seed(run_seed, rank, 0xFFFFFFFF), n)
        _BASE_BLOCK_CACHE[key] = block
    return block


def make_payload(run_seed: int, rank: int, step: int, nbytes: int, kind: str = "uniform") -> Tensor:
    """Deterministic F32 payload for (rank, step); identical across processes.

    Uniform payloads derive from one per-rank pseudorandom base block, rotated
    by a step-seeded offset with a step-seeded 4-float prefix. Every byte
    still depends on (run_seed, rank, step), but per-step cost is one copy,
    so generation fits inside the emulated-compute window even at 16MiB.
    """
    n = nbytes // 4
    seed = payload_seed(run_seed, rank, step)
    if kind == "uniform":
        base = _base_block(run_seed, rank, n)
        offset = seed % n
        rolled = np.concatenate([base[offset:], base[:offset]]) if offset else base.copy()
        rolled[: min(4, n)] = uniform_f32(seed, min(4, n))
        return Tensor(Dtype.F32, (n,), rolled.tobytes())
    # smooth: a few drifting sinusoids per channel, learnable by a compressor
    points = n // SMOOTH_CHANNELS
    if points < 2:
        raise ValueError("smooth payload needs at least 2 points per channel")
    coeffs = uniform_f32(seed, SMOOTH_CHANNELS * SMOOTH_HARMONICS * 2).astype(np.float64)
    coeffs = coeffs.reshape(SMOOTH_CHANNELS, SMOOTH_HARMONICS, 2)
    x = np.linspace(0.0, 1.0, points, dtype=np.float64)
    drift = 0.05 * step
    out = np.zeros((SMOOTH_CHANNELS, points), dtype=np.float64)
    for c in range(SMOOTH_CHANNELS):
        for h in range(SMOOTH_HARMONICS):
            amp, phase = coeffs[c, h]
            out[c] += amp * np.sin(2.0 * np.pi * (h + 1) * x + np.pi * phase + drift)
    flat = out.astype(np.float32).reshape(-1)
    pad = n - flat.size
    if pad:
        flat = np.concatenate([flat, np.zeros(pad, dtype=np.float32)])
    return Tensor(Dtype.F32, (SMOOTH_CHANNELS, points) if pad == 0 else (n,), flat.tobytes())


def payload_checksum(t: Tensor) -> int:
    return fnv1a64(t.data)


@dataclass
class LoopResult:
    sends: int = 0
    gets: int = 0
    checksums: dict[str, int] = field(default_factory=dict)


def _steps(spec: WorkloadSpec):
    """Yield (step, iteration_index, warmup) over warmup + measured iterations."""
    total = spec.warmup + spec.iterations
    for step in range(total):
        yield step, step, step < spec.warmup


def produce(spec: WorkloadSpec, client: ClientHandle, rank: int, run_seed: int,
            num_ranks: int, fieldname: str = "sol", start_delay_ms: int = 0) -> LoopResult:
    """Timed produce loop: sleep, send, (transfer mode) retrieve, refresh metadata.

    start_delay_ms de-phases virtual nodes that share this machine's cores;
    ranks of one co-located node still advance (and burst) together.
    """
    spec.validate()
    sink = client.sink
    result = LoopResult()
    if start_delay_ms:
        time.sleep(start_delay_ms / 1000)
    for step, it, warm in _steps(spec):
        if sink:
            sink.set_phase(it, warm)
        # the emulated compute produces the data: generate during the sleep
        # window, then sleep whatever remains of it
        t_gen = time.perf_counter()
        payload = None
        if step % spec.send_every == 0:
            payload = make_payload(run_seed, rank, step,
                                   spec.payload_bytes_per_rank, spec.payload_kind)
        time.sleep(max(0.0, spec.sleep_ms / 1000 - (time.perf_counter() - t_gen)))
        if payload is None:
            continue
        key = producer_key(rank, fieldname, step)
        client.put_tensor(key, payload, component="send")
        result.sends += 1
        result.checksums[key] = payload_checksum(payload)
        client.put_meta("num_ranks", num_ranks)
        client.put_meta("tensor_size", spec.payload_bytes_per_rank)
        client.put_meta("step", step)
        if spec.mode == "transfer":
            got = client.get_tensor(key, component="retrieve")
            result.gets += 1
            if got.data != payload.data:
                raise RuntimeError(f"roundtrip mismatch on {key}")
            if spec.delete_after_get:
                client.delete_tensor(key)
    return result


def consume(spec: WorkloadSpec, client: ClientHandle, rank: int, run_seed: int,
            producer_ranks: list[int], poll_interval_ms: int = 50, poll_max_tries: int = 200,
            verify: bool = True, shuffle: bool = False, fieldname: str = "sol") -> LoopResult:
    """Timed consume loop: poll for the first snapshot, then gather per epoch."""
    spec.validate()
    if not producer_ranks:
        raise ValueError("consumer needs at least one assigned producer rank")
    sink = client.sink
    result = LoopResult()
    # waiting for the first snapshot is real workload cost (polling shows up
    # in the metadata/poll components), so it is not flagged as warmup
    first_key = producer_key(producer_ranks[0], fieldname, 0)
    if sink:
        sink.set_phase(0, False)
    if not client.poll_key(first_key, poll_interval_ms, poll_max_tries):
        raise TimeoutError(f"no data produced: {first_key} absent after {poll_max_tries} polls")
    rng = np.random.default_rng(run_seed + rank) if shuffle else None
    for epoch in range(spec.iterations):
        if sink:
            sink.set_phase(epoch, False)
        step = client.get_meta("step")
        assigned = list(producer_ranks)
        if rng is not None:
            rng.shuffle(assigned)
        parts = []
        for p in assigned:
            key = producer_key(p, fieldname, int(step))
            if not client.poll_key(key, poll_interval_ms, poll_max_tries):
                raise TimeoutError(f"tensor {key} never appeared")
            t = client.get_tensor(key, component="retrieve")
            result.gets += 1
            if verify:
                expected = make_payload(run_seed, p, int(step),
                                        spec.payload_bytes_per_rank, spec.payload_kind)
                if t.data != expected.data:
                    raise RuntimeError(f"payload verification failed for {key}")
            parts.append(t.to_numpy().reshape(-1))
        np.concatenate(parts)  # the gathered epoch batch
        train_ms = spec.train_ms if spec.train_ms is not None else spec.sleep_ms
        time.sleep(train_ms / 1000)
    return result


def _deterministic_batch(run_seed: int, rank: int, step: int, batch_n: int, in_dim: int) -> Tensor:
    vals = uniform_f32(payload_seed(run_seed, rank, step), batch_n * in_dim)
    return Tensor(Dtype.F32, (batch_n, in_dim), vals.tobytes())


def load_model_blob(spec: WorkloadSpec) -> bytes:
    if not spec.model_file:
        raise ValueError("inference workload needs model_file")
    return Path(spec.model_file).read_bytes()


def infer(spec: WorkloadSpec, client: ClientHandle, rank: int, run_seed: int,
          model_key: str = "model", start_delay_ms: int = 0) -> LoopResult:
    """Three-step networked inference per iteration: send, evaluate, retrieve."""
    spec.validate()
    blob = load_model_blob(spec)
    model = executors.parse_model(blob)
    if model.in_dim is None:
        raise ValueError("IDENTITY models need an explicit feature size; use AFFINE/MLP")
    sink = client.sink
    if sink:
        sink.set_phase(0, True)
    # every rank loads the model: idempotent, and in co-located mode each
    # node's store needs its own copy
    client.set_model(model_key, blob)
    result = LoopResult()
    if start_delay_ms:
        time.sleep(start_delay_ms / 1000)
    for step, it, warm in _steps(spec):
        if sink:
            sink.set_phase(it, warm)
        t_gen = time.perf_counter()
        x = _deterministic_batch(run_seed, rank, step, spec.batch_n, model.in_dim)
        time.sleep(max(0.0, spec.sleep_ms / 1000 - (time.perf_counter() - t_gen)))
        in_key = producer_key(rank, "in", step)
        out_key = producer_key(rank, "out", step)
        t0 = time.perf_counter_ns()
        client.put_tensor(in_key, x, component="send")
        client.run_model(model_key, [in_key], [out_key], component="model_eval")
        y = client.get_tensor(out_key, component="retrieve")
        total_us = (time.perf_counter_ns() - t0) // 1000
        if sink:
            sink.add("inference", "inference_total", x.nbytes + y.nbytes, total_us)
        result.sends += 1
        result.gets += 1
        result.checksums[out_key] = payload_checksum(y)
    return result


def infer_inline(spec: WorkloadSpec, rank: int, run_seed: int,
                 sink: TimingSink | None = None, start_delay_ms: int = 0) -> LoopResult:
    """Same loop with the executor invoked in-process: no network, one component."""
    spec.validate()
    blob = load_model_blob(spec)
    model = executors.parse_model(blob)
    if model.in_dim is None:
        raise ValueError("IDENTITY models need an explicit feature size; use AFFINE/MLP")
    result = LoopResult()
    if start_delay_ms:
        time.sleep(start_delay_ms / 1000)
    for step, it, warm in _steps(spec):
        if sink:
            sink.set_phase(it, warm)
        t_gen = time.perf_counter()
        x = _deterministic_batch(run_seed, rank, step, spec.batch_n, model.in_dim)
        time.sleep(max(0.0, spec.sleep_ms / 1000 - (time.perf_counter() - t_gen)))
        t0 = time.perf_counter_ns()
        (y,) = executors.run(model, [x])
        total_us = (time.perf_counter_ns() - t0) // 1000
        if sink:
            sink.add("run", "inline_eval", x.nbytes + y.nbytes, total_us)
            sink.add("inference", "inference_total", x.nbytes + y.nbytes, total_us)
        result.sends += 1
        result.gets += 1
        result.checksums[producer_key(rank, "out", step)] = payload_checksum(y)
    return result
