"""Binary wire protocol: tensor/metadata codecs and length-prefixed framing.

All multi-byte integers are little-endian. Every encode has an exact inverse
decode; both sides of the protocol (and the second-language client) must be
bit-compatible, so the byte layouts here are frozen at version 1.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

PROTOCOL_VERSION = 1
MAX_RANK = 8
MAX_KEY_LEN = 255
MAX_META_STR = 64 * 1024
DEFAULT_MAX_FRAME_PAYLOAD = 1 << 30  # 1 GiB

FRAME_HEADER = struct.Struct("<IBBQ")  # total_len, version, command, request_id
FRAME_OVERHEAD = 10  # version..request_id, counted by total_len


class ProtocolError(Exception):
    """Malformed bytes or a violated wire invariant (maps to BAD_REQUEST)."""

    def __init__(self, msg: str, request_id: int | None = None):
        super().__init__(msg)
        self.request_id = request_id


class Command(enum.IntEnum):
    PING = 0x01
    PUT_TENSOR = 0x02
    GET_TENSOR = 0x03
    DEL_TENSOR = 0x04
    EXISTS = 0x05
    PUT_META = 0x06
    GET_META = 0x07
    SET_MODEL = 0x08
    GET_MODEL = 0x09
    RUN_MODEL = 0x0A
    INFO = 0x0B
    FLUSH = 0x0C


RESPONSE_FLAG = 0x80


class StatusCode(enum.IntEnum):
    OK = 0
    NOT_FOUND = 1
    BAD_REQUEST = 2
    EXEC_ERROR = 3
    OUT_OF_MEMORY = 4
    WRONG_SHARD = 5
    INTERNAL = 6


class Dtype(enum.IntEnum):
    F32 = 0
    F64 = 1
    I32 = 2
    I64 = 3
    U8 = 4


_ELEMENT_SIZE = {Dtype.F32: 4, Dtype.F64: 8, Dtype.I32: 4, Dtype.I64: 8, Dtype.U8: 1}
_NUMPY_NAME = {Dtype.F32: "<f4", Dtype.F64: "<f8", Dtype.I32: "<i4", Dtype.I64: "<i8", Dtype.U8: "u1"}


def element_size(dtype: Dtype) -> int:
    return _ELEMENT_SIZE[dtype]


def numpy_dtype(dtype: Dtype) -> str:
    """Little-endian numpy dtype string matching the wire layout."""
    return _NUMPY_NAME[dtype]


@dataclass(frozen=True)
class Tensor:
    """Row-major little-endian tensor payload, the unit of all data exchange."""

    dtype: Dtype
    shape: tuple[int, ...]
    data: bytes

    def __post_init__(self) -> None:
        if not 1 <= len(self.shape) <= MAX_RANK:
            raise ProtocolError(f"tensor rank must be 1..{MAX_RANK}, got {len(self.shape)}")
        n = 1
        for d in self.shape:
            if d < 1:
                raise ProtocolError(f"zero or negative dimension in shape {self.shape}")
            n *= d
        expected = n * element_size(self.dtype)
        if len(self.data) != expected:
            raise ProtocolError(
                f"tensor data length {len(self.data)} != {expected} for shape {self.shape}"
            )

    @property
    def nbytes(self) -> int:
        return len(self.data)

    @classmethod
    def from_numpy(cls, arr) -> "Tensor":
        import numpy as np

        by_kind = {"f4": Dtype.F32, "f8": Dtype.F64, "i4": Dtype.I32, "i8": Dtype.I64, "u1": Dtype.U8}
        code = arr.dtype.str.lstrip("<>|=")
        if code not in by_kind:
            raise ProtocolError(f"unsupported numpy dtype {arr.dtype}")
        dt = by_kind[code]
        arr = np.ascontiguousarray(arr).astype(numpy_dtype(dt), copy=False)
        return cls(dt, tuple(int(d) for d in arr.shape), arr.tobytes())

    def to_numpy(self):
        import numpy as np

        return np.frombuffer(self.data, dtype=numpy_dtype(self.dtype)).reshape(self.shape)


def validate_key(key: str) -> bytes:
    """Check key charset/length constraints; returns the UTF-8 bytes."""
    raw = key.encode("utf-8")
    if not 1 <= len(raw) <= MAX_KEY_LEN:
        raise ProtocolError(f"key length must be 1..{MAX_KEY_LEN} bytes, got {len(raw)}")
    if any(b < 0x20 for b in raw):
        raise ProtocolError("key contains control bytes")
    return raw


def producer_key(producer_id: int, fieldname: str, step: int) -> str:
    """Canonical '<producer_id>.<field>.<step>' key."""
    if producer_id < 0 or step < 0:
        raise ValueError("producer_id and step must be non-negative")
    return f"{producer_id}.{fieldname}.{step}"


# --- tensor codec -----------------------------------------------------------

def tensor_header(t: Tensor) -> bytes:
    return struct.pack("<BB", int(t.dtype), len(t.shape)) + struct.pack(f"<{len(t.shape)}Q", *t.shape)


def encode_tensor(t: Tensor) -> bytes:
    return tensor_header(t) + t.data


def encode_tensor_parts(t: Tensor) -> list[bytes]:
    """Header and data as separate buffers so large payloads avoid a concat copy."""
    return [tensor_header(t), t.data]


def decode_tensor(b) -> Tensor:
    if len(b) < 2:
        raise ProtocolError("tensor header truncated")
    code, ndim = b[0], b[1]
    try:
        dtype = Dtype(code)
    except ValueError:
        raise ProtocolError(f"unknown dtype code {code}") from None
    if not 1 <= ndim <= MAX_RANK:
        raise ProtocolError(f"tensor rank must be 1..{MAX_RANK}, got {ndim}")
    dims_end = 2 + 8 * ndim
    if len(b) < dims_end:
        raise ProtocolError("tensor dims truncated")
    shape = struct.unpack_from(f"<{ndim}Q", b, 2)
    n = 1
    for d in shape:
        if d < 1:
            raise ProtocolError("zero-sized dimension")
        n *= d
    expected = n * element_size(dtype)
    if len(b) - dims_end != expected:
        raise ProtocolError(f"tensor data length {len(b) - dims_end} != {expected}")
    return Tensor(dtype, tuple(shape), bytes(b[dims_end:]))


# --- metadata codec ---------------------------------------------------------

MetaValue = str | int | float


def encode_meta(v: MetaValue) -> bytes:
    if isinstance(v, bool):
        raise ProtocolError("bool is not a MetaValue")
    if isinstance(v, str):
        raw = v.encode("utf-8")
        if len(raw) > MAX_META_STR:
            raise ProtocolError(f"meta string exceeds {MAX_META_STR} bytes")
        return b"\x00" + struct.pack("<I", len(raw)) + raw
    if isinstance(v, int):
        return b"\x01" + struct.pack("<q", v)
    if isinstance(v, float):
        return b"\x02" + struct.pack("<d", v)
    raise ProtocolError(f"unsupported meta type {type(v).__name__}")


def decode_meta(b) -> MetaValue:
    if isinstance(b, memoryview):
        b = bytes(b)
    if not b:
        raise ProtocolError("empty meta value")
    tag = b[0]
    if tag == 0:
        if len(b) < 5:
            raise ProtocolError("meta string header truncated")
        (n,) = struct.unpack_from("<I", b, 1)
        if n > MAX_META_STR:
            raise ProtocolError(f"meta string exceeds {MAX_META_STR} bytes")
        if len(b) != 5 + n:
            raise ProtocolError("meta string length mismatch")
        return b[5:].decode("utf-8")
    if tag == 1:
        if len(b) != 9:
            raise ProtocolError("meta int must be 8 bytes")
        return struct.unpack_from("<q", b, 1)[0]
    if tag == 2:
        if len(b) != 9:
            raise ProtocolError("meta float must be 8 bytes")
        return struct.unpack_from("<d", b, 1)[0]
    raise ProtocolError(f"unknown meta tag {tag}")


# --- framing ----------------------------------------------------------------

@dataclass(frozen=True)
class Frame:
    command: int
    request_id: int
    payload: "bytes | memoryview" = b""  # memoryview only on zero-copy reads
    version: int = PROTOCOL_VERSION

    @property
    def is_response(self) -> bool:
        return bool(self.command & RESPONSE_FLAG)


def encode_frame(f: Frame, max_payload: int = DEFAULT_MAX_FRAME_PAYLOAD) -> bytes:
    if len(f.payload) > max_payload:
        raise ProtocolError(f"frame payload {len(f.payload)} exceeds cap {max_payload}")
    total = FRAME_OVERHEAD + len(f.payload)
    return FRAME_HEADER.pack(total, f.version, f.command, f.request_id) + f.payload


class FrameDecoder:
    """Incremental frame decoder: feed arbitrary chunks, pop complete frames.

    Self-delimiting: any chunking of a byte stream yields the same frames.
    """

    def __init__(self, max_payload: int = DEFAULT_MAX_FRAME_PAYLOAD):
        self.max_payload = max_payload
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> None:
        self._buf.extend(chunk)

    def next_frame(self) -> Frame | None:
        if len(self._buf) < FRAME_HEADER.size:
            return None
        total, version, command, request_id = FRAME_HEADER.unpack_from(self._buf, 0)
        if total < FRAME_OVERHEAD:
            raise ProtocolError(f"frame total_len {total} below minimum {FRAME_OVERHEAD}")
        if total - FRAME_OVERHEAD > self.max_payload:
            raise ProtocolError(f"frame payload {total - FRAME_OVERHEAD} exceeds cap {self.max_payload}")
        end = 4 + total
        if len(self._buf) < end:
            return None
        payload = bytes(self._buf[FRAME_HEADER.size:end])
        del self._buf[:end]
        if version != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version {version}")
        return Frame(command, request_id, payload, version)


def read_frame(sock, max_payload: int = DEFAULT_MAX_FRAME_PAYLOAD, copy: bool = True) -> Frame | None:
    """Blocking read of one frame from a socket; None on clean EOF.

    copy=False hands the payload back as a memoryview over a fresh buffer
    (one kernel copy total); callers on the hot path slice it without
    duplicating multi-megabyte tensors.
    """
    header = _read_exact(sock, FRAME_HEADER.size, allow_eof=True)
    if header is None:
        return None
    total, version, command, request_id = FRAME_HEADER.unpack(header)
    if total < FRAME_OVERHEAD:
        raise ProtocolError(f"frame total_len {total} below minimum {FRAME_OVERHEAD}", request_id)
    if total - FRAME_OVERHEAD > max_payload:
        raise ProtocolError(
            f"frame payload {total - FRAME_OVERHEAD} exceeds cap {max_payload}", request_id
        )
    n = total - FRAME_OVERHEAD
    payload: bytes | memoryview = b""
    if n:
        buf = bytearray(n)
        view = memoryview(buf)
        got = 0
        while got < n:
            r = sock.recv_into(view[got:])
            if r == 0:
                raise ProtocolError("connection closed mid-frame", request_id)
            got += r
        payload = bytes(buf) if copy else view
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}", request_id)
    return Frame(command, request_id, payload, version)


def send_frame(sock, command: int, request_id: int, parts: list,
               max_payload: int = DEFAULT_MAX_FRAME_PAYLOAD) -> None:
    """Gather-write one frame; large payload buffers are never concatenated."""
    total = 0
    for p in parts:
        total += len(p)
    if total > max_payload:
        raise ProtocolError(f"frame payload {total} exceeds cap {max_payload}")
    header = FRAME_HEADER.pack(FRAME_OVERHEAD + total, PROTOCOL_VERSION, command, request_id)
    if total <= 1 << 16:
        sock.sendall(header + b"".join(bytes(p) for p in parts))
    else:
        sock.sendall(header)
        for p in parts:
            sock.sendall(p)


def _read_exact(sock, n: int, allow_eof: bool = False) -> bytes | None:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        r = sock.recv_into(view[got:])
        if r == 0:
            if allow_eof and got == 0:
                return None
            raise ProtocolError("connection closed mid-frame")
        got += r
    return bytes(buf)


# --- request/response payload helpers ---------------------------------------

def pack_key(key: str) -> bytes:
    raw = validate_key(key)
    return struct.pack("<H", len(raw)) + raw


def unpack_key(b, offset: int) -> tuple[str, int]:
    if len(b) < offset + 2:
        raise ProtocolError("key length field truncated")
    (n,) = struct.unpack_from("<H", b, offset)
    end = offset + 2 + n
    if len(b) < end:
        raise ProtocolError("key bytes truncated")
    raw = bytes(b[offset + 2:end])
    if not 1 <= n <= MAX_KEY_LEN or any(x < 0x20 for x in raw):
        raise ProtocolError("invalid key encoding")
    return raw.decode("utf-8"), end


def pack_keyed_blob(key: str, blob: bytes) -> bytes:
    return pack_key(key) + blob


def unpack_keyed_blob(b) -> tuple[str, "bytes | memoryview"]:
    """Split key from trailing blob; memoryview input keeps the blob zero-copy."""
    key, end = unpack_key(b, 0)
    return key, b[end:] if isinstance(b, memoryview) else bytes(b[end:])


def pack_model_payload(key: str, device_hint: str, blob: bytes) -> bytes:
    hint = device_hint.encode("utf-8")
    if len(hint) > 0xFFFF:
        raise ProtocolError("device hint too long")
    return pack_key(key) + struct.pack("<H", len(hint)) + hint + blob


def unpack_model_payload(b) -> tuple[str, str, bytes]:
    if isinstance(b, memoryview):
        b = bytes(b)
    key, off = unpack_key(b, 0)
    if len(b) < off + 2:
        raise ProtocolError("device hint length truncated")
    (n,) = struct.unpack_from("<H", b, off)
    if len(b) < off + 2 + n:
        raise ProtocolError("device hint truncated")
    hint = b[off + 2:off + 2 + n].decode("utf-8")
    return key, hint, bytes(b[off + 2 + n:])


def pack_model_body(device_hint: str, blob: bytes) -> bytes:
    hint = device_hint.encode("utf-8")
    return struct.pack("<H", len(hint)) + hint + blob


def unpack_model_body(b) -> tuple[str, bytes]:
    if isinstance(b, memoryview):
        b = bytes(b)
    if len(b) < 2:
        raise ProtocolError("model body truncated")
    (n,) = struct.unpack_from("<H", b, 0)
    if len(b) < 2 + n:
        raise ProtocolError("device hint truncated")
    return b[2:2 + n].decode("utf-8"), bytes(b[2 + n:])


def pack_run_model(model_key: str, input_keys: list[str], output_keys: list[str]) -> bytes:
    parts = [pack_key(model_key), struct.pack("<H", len(input_keys))]
    parts += [pack_key(k) for k in input_keys]
    parts.append(struct.pack("<H", len(output_keys)))
    parts += [pack_key(k) for k in output_keys]
    return b"".join(parts)


def unpack_run_model(b: bytes) -> tuple[str, list[str], list[str]]:
    model_key, off = unpack_key(b, 0)

    def keylist(off: int) -> tuple[list[str], int]:
        if len(b) < off + 2:
            raise ProtocolError("key count truncated")
        (n,) = struct.unpack_from("<H", b, off)
        off += 2
        keys = []
        for _ in range(n):
            k, off = unpack_key(b, off)
            keys.append(k)
        return keys, off

    inputs, off = keylist(off)
    outputs, off = keylist(off)
    if off != len(b):
        raise ProtocolError("trailing bytes in RUN_MODEL payload")
    return model_key, inputs, outputs


def pack_meta_map(items: dict[str, MetaValue]) -> bytes:
    parts = [struct.pack("<H", len(items))]
    for k, v in items.items():
        parts.append(pack_key(k))
        parts.append(encode_meta(v))
    return b"".join(parts)


def unpack_meta_map(b: bytes) -> dict[str, MetaValue]:
    if len(b) < 2:
        raise ProtocolError("meta map truncated")
    (n,) = struct.unpack_from("<H", b, 0)
    off = 2
    out: dict[str, MetaValue] = {}
    for _ in range(n):
        k, off = unpack_key(b, off)
        if len(b) < off + 1:
            raise ProtocolError("meta map value truncated")
        tag = b[off]
        if tag == 0:
            if len(b) < off + 5:
                raise ProtocolError("meta map value truncated")
            (slen,) = struct.unpack_from("<I", b, off + 1)
            vend = off + 5 + slen
        elif tag in (1, 2):
            vend = off + 9
        else:
            raise ProtocolError(f"unknown meta tag {tag}")
        if len(b) < vend:
            raise ProtocolError("meta map value truncated")
        out[k] = decode_meta(bytes(b[off:vend]))
        off = vend
    if off != len(b):
        raise ProtocolError("trailing bytes in meta map")
    return out
