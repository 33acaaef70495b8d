"""Pluggable model executors and the native MEX1 model blob format.

MEX1 layout (all little-endian):
    "MEX1" magic, exec_type:u8, then per type:
      IDENTITY(0): nothing
      AFFINE(1):   in:u32, out:u32, W (out*in f32 row-major), b (out f32)
      MLP(2):      n_layers:u8, n_layers * (in:u32, out:u32, act:u8),
                   then per layer W followed by b, f32, in layer order

Evaluation uses a fixed accumulation order (sum over the input index,
ascending, in f32) so outputs are bit-reproducible across runs, platforms
and the separately written reference oracle.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .prng import uniform_f32
from .wire import Dtype, Tensor

MAGIC = b"MEX1"


class ModelFormatError(Exception):
    """Blob does not parse as a MEX1 model."""


class ExecError(Exception):
    """Input tensors incompatible with the model (maps to EXEC_ERROR)."""


class ExecType(enum.IntEnum):
    IDENTITY = 0
    AFFINE = 1
    MLP = 2


class Activation(enum.IntEnum):
    NONE = 0
    RELU = 1


@dataclass(frozen=True)
class Layer:
    in_dim: int
    out_dim: int
    act: Activation
    weights: np.ndarray  # (out, in) f32
    bias: np.ndarray  # (out,) f32


@dataclass(frozen=True)
class ModelSpec:
    name: str
    exec_type: ExecType
    device_hint: str
    blob: bytes
    layers: tuple[Layer, ...]  # empty for IDENTITY

    @property
    def in_dim(self) -> int | None:
        return self.layers[0].in_dim if self.layers else None

    @property
    def out_dim(self) -> int | None:
        return self.layers[-1].out_dim if self.layers else None


def parse_model(blob: bytes, name: str = "", device_hint: str = "cpu") -> ModelSpec:
    """Parse and validate a MEX1 blob; total on arbitrary bytes."""
    if len(blob) < 5:
        raise ModelFormatError("blob shorter than MEX1 header")
    if blob[:4] != MAGIC:
        raise ModelFormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    try:
        exec_type = ExecType(blob[4])
    except ValueError:
        raise ModelFormatError(f"unknown exec type {blob[4]}") from None

    body = blob[5:]
    if exec_type == ExecType.IDENTITY:
        if body:
            raise ModelFormatError("IDENTITY model carries unexpected payload")
        return ModelSpec(name, exec_type, device_hint, bytes(blob), ())

    if exec_type == ExecType.AFFINE:
        if len(body) < 8:
            raise ModelFormatError("AFFINE header truncated")
        in_dim, out_dim = struct.unpack_from("<II", body, 0)
        layers = _parse_layers(body, 8, [(in_dim, out_dim, Activation.NONE)])
        return ModelSpec(name, exec_type, device_hint, bytes(blob), layers)

    # MLP
    if len(body) < 1:
        raise ModelFormatError("MLP header truncated")
    n_layers = body[0]
    if n_layers < 1:
        raise ModelFormatError("MLP must have at least one layer")
    off = 1
    shapes: list[tuple[int, int, Activation]] = []
    for i in range(n_layers):
        if len(body) < off + 9:
            raise ModelFormatError(f"MLP layer {i} header truncated")
        in_dim, out_dim, act_code = struct.unpack_from("<IIB", body, off)
        off += 9
        try:
            act = Activation(act_code)
        except ValueError:
            raise ModelFormatError(f"unknown activation code {act_code} in layer {i}") from None
        shapes.append((in_dim, out_dim, act))
    for i in range(1, n_layers):
        if shapes[i - 1][1] != shapes[i][0]:
            raise ModelFormatError(
                f"layer {i - 1} out_dim {shapes[i - 1][1]} != layer {i} in_dim {shapes[i][0]}"
            )
    layers = _parse_layers(body, off, shapes)
    return ModelSpec(name, exec_type, device_hint, bytes(blob), layers)


def _parse_layers(body: bytes, off: int, shapes: list[tuple[int, int, "Activation"]]) -> tuple[Layer, ...]:
    layers = []
    for i, (in_dim, out_dim, act) in enumerate(shapes):
        if in_dim < 1 or out_dim < 1:
            raise ModelFormatError(f"layer {i} has zero dimension ({in_dim}x{out_dim})")
        w_bytes = 4 * in_dim * out_dim
        b_bytes = 4 * out_dim
        if len(body) < off + w_bytes + b_bytes:
            raise ModelFormatError(f"layer {i} weights truncated")
        w = np.frombuffer(body, dtype="<f4", count=in_dim * out_dim, offset=off).reshape(out_dim, in_dim)
        off += w_bytes
        b = np.frombuffer(body, dtype="<f4", count=out_dim, offset=off)
        off += b_bytes
        layers.append(Layer(in_dim, out_dim, act, w, b))
    if off != len(body):
        raise ModelFormatError(f"{len(body) - off} trailing bytes after weights")
    return tuple(layers)


def build_identity_blob() -> bytes:
    return MAGIC + bytes([ExecType.IDENTITY])


def build_affine_blob(weights: np.ndarray, bias: np.ndarray) -> bytes:
    w = np.ascontiguousarray(weights, dtype="<f4")
    b = np.ascontiguousarray(bias, dtype="<f4")
    out_dim, in_dim = w.shape
    if b.shape != (out_dim,):
        raise ValueError(f"bias shape {b.shape} != ({out_dim},)")
    return MAGIC + bytes([ExecType.AFFINE]) + struct.pack("<II", in_dim, out_dim) + w.tobytes() + b.tobytes()


def build_mlp_blob(layers: list[tuple[np.ndarray, np.ndarray, Activation]]) -> bytes:
    if not 1 <= len(layers) <= 255:
        raise ValueError("MLP layer count must be 1..255")
    header = [MAGIC, bytes([ExecType.MLP]), bytes([len(layers)])]
    weights = []
    for w, b, act in layers:
        w = np.ascontiguousarray(w, dtype="<f4")
        b = np.ascontiguousarray(b, dtype="<f4")
        out_dim, in_dim = w.shape
        if b.shape != (out_dim,):
            raise ValueError(f"bias shape {b.shape} != ({out_dim},)")
        header.append(struct.pack("<IIB", in_dim, out_dim, int(act)))
        weights.append(w.tobytes() + b.tobytes())
    return b"".join(header + weights)


def random_affine_blob(in_dim: int, out_dim: int, seed: int) -> bytes:
    """Reproducible random AFFINE model: splitmix64 uniform [-1,1) weights."""
    vals = uniform_f32(seed, out_dim * in_dim + out_dim)
    w = vals[: out_dim * in_dim].reshape(out_dim, in_dim)
    b = vals[out_dim * in_dim:]
    return build_affine_blob(w, b)


def random_mlp_blob(dims: list[int], seed: int, last_act: Activation = Activation.NONE) -> bytes:
    """Reproducible random MLP over dims [d0, d1, ..., dn]; relu between layers."""
    if len(dims) < 2:
        raise ValueError("MLP needs at least two dims")
    total = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
    vals = uniform_f32(seed, total)
    layers = []
    off = 0
    for i in range(len(dims) - 1):
        din, dout = dims[i], dims[i + 1]
        w = vals[off:off + din * dout].reshape(dout, din)
        off += din * dout
        b = vals[off:off + dout]
        off += dout
        act = Activation.RELU if i < len(dims) - 2 else last_act
        layers.append((w, b, act))
    return build_mlp_blob(layers)


# --- evaluation --------------------------------------------------------------

def _batch_view(model: ModelSpec, t: Tensor) -> np.ndarray:
    if t.dtype != Dtype.F32:
        raise ExecError(f"model input must be F32, got {t.dtype.name}")
    if len(t.shape) < 2:
        raise ExecError(f"model input rank must be >= 2 (batch first), got shape {t.shape}")
    n = t.shape[0]
    feat = 1
    for d in t.shape[1:]:
        feat *= d
    if feat != model.in_dim:
        raise ExecError(f"flattened feature size {feat} != model in_dim {model.in_dim}")
    return t.to_numpy().reshape(n, feat)


def _affine_fixed_order(x: np.ndarray, layer: Layer) -> np.ndarray:
    # products are exact IEEE f32 multiplies; ufunc accumulate sums them
    # strictly in ascending input-index order, then the bias is added last.
    prods = x[:, None, :] * layer.weights[None, :, :]
    acc = np.add.accumulate(prods, axis=-1)[..., -1]
    return acc + layer.bias


def run(model: ModelSpec, inputs: list[Tensor]) -> list[Tensor]:
    """Evaluate a parsed model on one input tensor; deterministic f32 math."""
    if len(inputs) != 1:
        raise ExecError(f"expected exactly 1 input tensor, got {len(inputs)}")
    t = inputs[0]
    if model.exec_type == ExecType.IDENTITY:
        return [t]
    x = _batch_view(model, t)
    for layer in model.layers:
        x = _affine_fixed_order(x, layer)
        if layer.act == Activation.RELU:
            x = np.maximum(x, np.float32(0.0))
    n = t.shape[0]
    out = np.ascontiguousarray(x, dtype="<f4")
    return [Tensor(Dtype.F32, (n, model.out_dim), out.tobytes())]
