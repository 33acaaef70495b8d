#!/usr/bin/env python3
"""Regenerate fixtures/golden_wire.json, the cross-implementation test vectors.

Every client implementation (whatever the language) must produce these exact
bytes. Run from the repo root: python3 scripts/gen_fixtures.py
"""

from __future__ import annotations

import json
import struct
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from isf import executors as ex  # noqa: E402
from isf import wire  # noqa: E402
from isf.metrics import relative_frobenius  # noqa: E402
from isf.prng import payload_seed, splitmix64, uniform_f32  # noqa: E402
from isf.routing import ShardMap, fnv1a64, shard_for_key  # noqa: E402
from isf.wire import Command, Dtype, Frame, Tensor  # noqa: E402


def f32s(*vals) -> bytes:
    return np.array(vals, dtype="<f4").tobytes()


def tensor_fixture(name: str, t: Tensor) -> dict:
    return {"name": name, "dtype": t.dtype.name, "dtype_code": int(t.dtype),
            "shape": list(t.shape), "data_hex": t.data.hex(),
            "encoded_hex": wire.encode_tensor(t).hex()}


def frame_fixture(name: str, f: Frame) -> dict:
    return {"name": name, "command": f.command, "request_id": f.request_id,
            "payload_hex": f.payload.hex(), "frame_hex": wire.encode_frame(f).hex()}


def main() -> None:
    out: dict = {"format": "isf-golden-1"}

    t_f32 = Tensor(Dtype.F32, (2, 2), f32s(1.0, -2.5, 3.25, 0.0))
    t_f64 = Tensor(Dtype.F64, (3,), np.array([0.5, -1.0, 2.0], dtype="<f8").tobytes())
    t_i32 = Tensor(Dtype.I32, (2,), np.array([-7, 100000], dtype="<i4").tobytes())
    t_i64 = Tensor(Dtype.I64, (1,), np.array([-(2**40)], dtype="<i8").tobytes())
    t_u8 = Tensor(Dtype.U8, (3,), bytes([7, 8, 9]))
    t_unit = Tensor(Dtype.F32, (1,), f32s(1.0))
    out["tensors"] = [
        tensor_fixture("f32_2x2", t_f32), tensor_fixture("f64_3", t_f64),
        tensor_fixture("i32_2", t_i32), tensor_fixture("i64_1", t_i64),
        tensor_fixture("u8_3", t_u8), tensor_fixture("f32_unit", t_unit),
    ]

    out["meta_values"] = [
        {"name": "int_42", "kind": "int", "value": 42, "encoded_hex": wire.encode_meta(42).hex()},
        {"name": "int_neg", "kind": "int", "value": -3, "encoded_hex": wire.encode_meta(-3).hex()},
        {"name": "float_pi", "kind": "float", "value": 3.25, "encoded_hex": wire.encode_meta(3.25).hex()},
        {"name": "str_hello", "kind": "string", "value": "hello", "encoded_hex": wire.encode_meta("hello").hex()},
    ]

    put_payload = wire.pack_keyed_blob("0.sol.2", wire.encode_tensor(t_f32))
    run_payload = wire.pack_run_model("model", ["0.in.0"], ["0.out.0"])
    out["frames"] = [
        frame_fixture("ping_id7", Frame(Command.PING, 7)),
        frame_fixture("put_tensor_f32_2x2", Frame(Command.PUT_TENSOR, 42, put_payload)),
        frame_fixture("get_tensor", Frame(Command.GET_TENSOR, 43, wire.pack_key("0.sol.2"))),
        frame_fixture("exists", Frame(Command.EXISTS, 44, wire.pack_key("0.sol.2"))),
        frame_fixture("put_meta_step", Frame(Command.PUT_META, 45,
                                             wire.pack_keyed_blob("step", wire.encode_meta(2)))),
        frame_fixture("run_model", Frame(Command.RUN_MODEL, 46, run_payload)),
        frame_fixture("get_tensor_ok_response",
                      Frame(Command.GET_TENSOR | wire.RESPONSE_FLAG, 43,
                            bytes([0]) + wire.encode_tensor(t_f32))),
        frame_fixture("get_tensor_not_found_response",
                      Frame(Command.GET_TENSOR | wire.RESPONSE_FLAG, 47, bytes([1]))),
    ]

    out["fnv1a64"] = [
        {"key": k, "hash_hex": f"{fnv1a64(k.encode()):016x}"}
        for k in ["", "a", "foobar", "0.sol.0", "1.sol.0", "23.sol.40", "model"]
    ]
    smap = ShardMap(("s0", "s1", "s2", "s3"))
    out["shard_routing"] = [
        {"key": k, "shard_count": 4, "shard": shard_for_key(k, smap)}
        for k in ["a", "0.sol.0", "1.sol.0", "2.sol.0", "3.sol.0", "0.sol.2", "weights"]
    ]

    out["splitmix64"] = [
        {"seed": str(seed), "outputs_hex": [f"{int(v):016x}" for v in splitmix64(seed, 4)]}
        for seed in (0, 1, 0xDEADBEEF)
    ]
    out["payload_seeds"] = [
        {"run_seed": rs, "rank": r, "step": s, "seed": str(payload_seed(rs, r, s))}
        for rs, r, s in [(0, 0, 0), (1, 2, 3), (1234, 7, 40)]
    ]
    u = uniform_f32(42, 8)
    out["uniform_f32"] = [{
        "seed": 42, "n": 8,
        "values_bits_hex": [f"{b:08x}" for b in u.view(np.uint32)],
        "values": [float(v) for v in u],
    }]

    affine = ex.build_affine_blob(np.array([[1, 0], [0, 2]], dtype=np.float32),
                                  np.array([1, -1], dtype=np.float32))
    x = Tensor(Dtype.F32, (1, 2), f32s(3.0, 4.0))
    (y,) = ex.run(ex.parse_model(affine), [x])
    mlp = ex.random_mlp_blob([3, 4, 2], seed=123)
    xm = Tensor(Dtype.F32, (2, 3), f32s(0.5, -1.25, 2.0, -0.75, 0.0, 1.5))
    (ym,) = ex.run(ex.parse_model(mlp), [xm])
    out["mex1"] = [
        {"name": "identity", "blob_hex": ex.build_identity_blob().hex()},
        {"name": "affine_2x2", "blob_hex": affine.hex(),
         "input": tensor_fixture("in", x), "output": tensor_fixture("out", y)},
        {"name": "mlp_3_4_2_seed123", "blob_hex": mlp.hex(),
         "input": tensor_fixture("in", xm), "output": tensor_fixture("out", ym)},
    ]

    pair1 = ([[1.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [1.0, 0.0]])
    pair2 = ([[1.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [1.0, 1.0]])
    rng = np.random.default_rng(9)
    ref = rng.standard_normal((4, 6))
    approx = ref + 0.1 * rng.standard_normal((4, 6))
    out["rel_frobenius"] = [
        {"name": "full_error", "pairs": [[[[3.0, 4.0]], [[0.0, 0.0]]]], "expected": 1.0},
        {"name": "half_then_zero", "pairs": [list(pair1), list(pair2)], "expected": 0.25},
        {"name": "random_4x6",
         "pairs": [[ref.tolist(), approx.tolist()]],
         "expected": relative_frobenius([(ref, approx)])},
    ]

    path = Path(__file__).resolve().parents[1] / "fixtures" / "golden_wire.json"
    path.parent.mkdir(exist_ok=True)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
