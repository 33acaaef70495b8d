"""In-memory tensor/metadata/model store serving the wire protocol over TCP.

One store process is one shard. Stores never talk to each other: clustered
placement is entirely client-side, and RUN_MODEL only touches keys resident
on the receiving shard.
"""

from __future__ import annotations

import json
import os
import socket
import sys
import threading
import time
from dataclasses import dataclass, field

from . import executors, wire
from .wire import Command, Frame, StatusCode

DEFAULT_MAX_BYTES = 4 << 30


class CapacityError(Exception):
    """A PUT would push bytes_used past max_bytes."""


@dataclass
class StoredModel:
    device_hint: str
    blob: bytes
    parsed: executors.ModelSpec


@dataclass
class StoreState:
    """Keyed tensor/meta/model maps with exact byte accounting."""

    max_bytes: int = DEFAULT_MAX_BYTES
    tensors: dict[str, wire.Tensor] = field(default_factory=dict)
    meta: dict[str, wire.MetaValue] = field(default_factory=dict)
    models: dict[str, StoredModel] = field(default_factory=dict)
    bytes_used: int = 0
    requests_served: int = 0
    started_at: float = field(default_factory=time.monotonic)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def put_tensor(self, key: str, tensor: wire.Tensor) -> None:
        with self.lock:
            old = self.tensors.get(key)
            delta = tensor.nbytes - (old.nbytes if old is not None else 0)
            if self.bytes_used + delta > self.max_bytes:
                raise CapacityError(
                    f"put of {tensor.nbytes} bytes exceeds cap ({self.bytes_used}/{self.max_bytes})"
                )
            self.tensors[key] = tensor
            self.bytes_used += delta

    def get_tensor(self, key: str) -> wire.Tensor | None:
        with self.lock:
            return self.tensors.get(key)

    def del_tensor(self, key: str) -> bool:
        with self.lock:
            old = self.tensors.pop(key, None)
            if old is None:
                return False
            self.bytes_used -= old.nbytes
            return True

    def exists(self, key: str) -> bool:
        with self.lock:
            return key in self.tensors

    def put_meta(self, key: str, value: wire.MetaValue) -> None:
        with self.lock:
            self.meta[key] = value

    def get_meta(self, key: str) -> wire.MetaValue | None:
        with self.lock:
            return self.meta.get(key)

    def set_model(self, key: str, device_hint: str, blob: bytes) -> None:
        parsed = executors.parse_model(blob, name=key, device_hint=device_hint)
        with self.lock:
            old = self.models.get(key)
            delta = len(blob) - (len(old.blob) if old is not None else 0)
            if self.bytes_used + delta > self.max_bytes:
                raise CapacityError(f"model of {len(blob)} bytes exceeds cap")
            self.models[key] = StoredModel(device_hint, bytes(blob), parsed)
            self.bytes_used += delta

    def get_model(self, key: str) -> StoredModel | None:
        with self.lock:
            return self.models.get(key)

    def run_model(self, model_key: str, input_keys: list[str], output_keys: list[str]) -> None:
        """Evaluate against resident tensors; atomic: no outputs on failure."""
        model = self.get_model(model_key)
        if model is None:
            raise KeyError(f"model '{model_key}' not found")
        inputs = []
        for k in input_keys:
            t = self.get_tensor(k)
            if t is None:
                raise KeyError(f"input tensor '{k}' not found")
            inputs.append(t)
        outputs = executors.run(model.parsed, inputs)
        if len(outputs) != len(output_keys):
            raise executors.ExecError(
                f"model produced {len(outputs)} outputs for {len(output_keys)} output keys"
            )
        with self.lock:
            delta = 0
            for k, t in zip(output_keys, outputs):
                old = self.tensors.get(k)
                delta += t.nbytes - (old.nbytes if old is not None else 0)
            if self.bytes_used + delta > self.max_bytes:
                raise CapacityError("model outputs exceed cap")
            for k, t in zip(output_keys, outputs):
                self.tensors[k] = t
            self.bytes_used += delta

    def flush(self) -> None:
        with self.lock:
            self.tensors.clear()
            self.meta.clear()
            self.models.clear()
            self.bytes_used = 0

    def info(self) -> dict[str, wire.MetaValue]:
        with self.lock:
            return {
                "keys": len(self.tensors) + len(self.meta) + len(self.models),
                "tensor_keys": len(self.tensors),
                "meta_keys": len(self.meta),
                "model_keys": len(self.models),
                "bytes_used": self.bytes_used,
                "max_bytes": self.max_bytes,
                "requests_served": self.requests_served,
                "uptime_ms": int((time.monotonic() - self.started_at) * 1000),
                "outbound_connections": 0,
            }


def handle_request(state: StoreState, command: int, payload) -> tuple[StatusCode, "bytes | list[bytes]"]:
    """Dispatch one decoded request; returns (status, response body or body parts).

    `payload` may be a memoryview (zero-copy server path) or bytes.
    """
    try:
        if command == Command.PING:
            return StatusCode.OK, b""

        if command == Command.PUT_TENSOR:
            key, blob = wire.unpack_keyed_blob(payload)
            tensor = wire.decode_tensor(blob)
            state.put_tensor(key, tensor)
            return StatusCode.OK, b""

        if command == Command.GET_TENSOR:
            key, rest = wire.unpack_keyed_blob(payload)
            if len(rest):
                return StatusCode.BAD_REQUEST, b"trailing bytes"
            t = state.get_tensor(key)
            if t is None:
                return StatusCode.NOT_FOUND, b""
            return StatusCode.OK, wire.encode_tensor_parts(t)

        if command == Command.DEL_TENSOR:
            key, _ = wire.unpack_keyed_blob(payload)
            return (StatusCode.OK if state.del_tensor(key) else StatusCode.NOT_FOUND), b""

        if command == Command.EXISTS:
            key, _ = wire.unpack_keyed_blob(payload)
            return StatusCode.OK, (b"\x01" if state.exists(key) else b"\x00")

        if command == Command.PUT_META:
            key, blob = wire.unpack_keyed_blob(payload)
            state.put_meta(key, wire.decode_meta(blob))
            return StatusCode.OK, b""

        if command == Command.GET_META:
            key, _ = wire.unpack_keyed_blob(payload)
            v = state.get_meta(key)
            if v is None:
                return StatusCode.NOT_FOUND, b""
            return StatusCode.OK, wire.encode_meta(v)

        if command == Command.SET_MODEL:
            key, hint, blob = wire.unpack_model_payload(payload)
            state.set_model(key, hint, blob)
            return StatusCode.OK, b""

        if command == Command.GET_MODEL:
            key, _ = wire.unpack_keyed_blob(payload)
            m = state.get_model(key)
            if m is None:
                return StatusCode.NOT_FOUND, b""
            return StatusCode.OK, wire.pack_model_body(m.device_hint, m.blob)

        if command == Command.RUN_MODEL:
            model_key, input_keys, output_keys = wire.unpack_run_model(payload)
            try:
                state.run_model(model_key, input_keys, output_keys)
            except KeyError as exc:
                return StatusCode.NOT_FOUND, str(exc).strip("'\"").encode()
            return StatusCode.OK, b""

        if command == Command.INFO:
            return StatusCode.OK, wire.pack_meta_map(state.info())

        if command == Command.FLUSH:
            state.flush()
            return StatusCode.OK, b""

        return StatusCode.BAD_REQUEST, f"unknown command {command:#04x}".encode()
    except wire.ProtocolError as exc:
        return StatusCode.BAD_REQUEST, str(exc).encode()
    except executors.ModelFormatError as exc:
        return StatusCode.BAD_REQUEST, str(exc).encode()
    except executors.ExecError as exc:
        return StatusCode.EXEC_ERROR, str(exc).encode()
    except CapacityError as exc:
        return StatusCode.OUT_OF_MEMORY, str(exc).encode()
    except Exception as exc:  # pragma: no cover - defensive
        return StatusCode.INTERNAL, f"{type(exc).__name__}: {exc}".encode()


@dataclass
class ServerConfig:
    max_bytes: int = DEFAULT_MAX_BYTES
    workers: int = 4
    cpus: list[int] | None = None
    log_stream: object = None  # file-like; None disables per-request logging


class StoreServer:
    """Threaded TCP server: one thread per connection, bounded worker slots."""

    def __init__(self, host: str, port: int, config: ServerConfig | None = None):
        self.config = config or ServerConfig()
        self.state = StoreState(max_bytes=self.config.max_bytes)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(128)
        self.address = "%s:%d" % self._sock.getsockname()[:2]
        self._workers = threading.Semaphore(max(1, self.config.workers))
        self._stop = threading.Event()
        self._conn_seq = 0
        self._log_lock = threading.Lock()
        self._apply_affinity()

    def _apply_affinity(self) -> None:
        if not self.config.cpus:
            return
        try:
            avail = os.sched_getaffinity(0)
            want = set(self.config.cpus) & avail
            if want:
                os.sched_setaffinity(0, want)
        except (AttributeError, OSError):
            pass  # platform without affinity support: silently ignored

    def _log(self, conn_id: int, command: int, status: int, nbytes: int, micros: int) -> None:
        stream = self.config.log_stream
        if stream is None:
            return
        line = json.dumps(
            {"ts": round(time.time(), 6), "conn": conn_id, "command": command,
             "status": status, "bytes": nbytes, "micros": micros},
            separators=(",", ":"),
        )
        with self._log_lock:
            stream.write(line + "\n")

    def serve_forever(self, ready_stream=None) -> None:
        if ready_stream is not None:
            ready_stream.write(f"READY {self.address}\n")
            ready_stream.flush()
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                break
            self._conn_seq += 1
            t = threading.Thread(
                target=self._serve_connection, args=(conn, self._conn_seq), daemon=True
            )
            t.start()

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t

    def shutdown(self) -> None:
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass

    def _serve_connection(self, conn: socket.socket, conn_id: int) -> None:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            while not self._stop.is_set():
                try:
                    frame = wire.read_frame(conn, copy=False)
                except wire.ProtocolError as exc:
                    # Malformed framing: answer if the request id was readable,
                    # then drop only this connection.
                    self._respond_framing_error(conn, exc)
                    return
                if frame is None:
                    return
                t0 = time.perf_counter_ns()
                with self._workers:
                    status, body = handle_request(self.state, frame.command, frame.payload)
                    with self.state.lock:
                        self.state.requests_served += 1
                    parts = [bytes([status])] + (body if isinstance(body, list) else [body])
                    try:
                        wire.send_frame(conn, frame.command | wire.RESPONSE_FLAG,
                                        frame.request_id, parts)
                    except OSError:
                        return
                micros = (time.perf_counter_ns() - t0) // 1000
                self._log(conn_id, frame.command, int(status), len(frame.payload), micros)
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _respond_framing_error(self, conn: socket.socket, exc: wire.ProtocolError) -> None:
        # Best effort: a header with a hostile total_len still has a readable
        # request id, so the client gets BAD_REQUEST before the socket closes.
        rid = exc.request_id if exc.request_id is not None else 0
        try:
            resp = Frame(wire.RESPONSE_FLAG, rid, bytes([StatusCode.BAD_REQUEST]) + str(exc).encode())
            conn.sendall(wire.encode_frame(resp))
        except OSError:
            pass


def serve(bind_addr: str, config: ServerConfig | None = None, ready_stream=None) -> None:
    """Run a store until interrupted; emits 'READY <addr>' once listening."""
    host, _, port = bind_addr.rpartition(":")
    server = StoreServer(host or "127.0.0.1", int(port), config)
    server.serve_forever(ready_stream=ready_stream if ready_stream is not None else sys.stdout)
