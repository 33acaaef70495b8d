"""Client library: one-call connect/send/retrieve/poll/model-eval semantics.

A handle is synchronous RPC with one outstanding request per connection.
Co-located mode talks to exactly one on-node store; clustered mode routes
each key with the shared deterministic hash and broadcasts models.
"""

from __future__ import annotations

import os
import socket
import time
from dataclasses import dataclass, field

from . import executors, wire
from .routing import ShardMap, shard_for_key
from .timing import TimingSink
from .wire import Command, Frame, StatusCode

ADDR_ENV = "ISF_DB_ADDR"
SHARD_MAP_ENV = "ISF_SHARD_MAP"


class ClientError(Exception):
    pass


class ConnectError(ClientError):
    pass


class RequestTimeout(ClientError):
    """Retriable transport-level timeout; distinct from NOT_FOUND."""


class StatusError(ClientError):
    def __init__(self, status: StatusCode, detail: str = ""):
        super().__init__(f"{status.name}: {detail}" if detail else status.name)
        self.status = status
        self.detail = detail


class NotFoundError(StatusError):
    def __init__(self, detail: str = ""):
        super().__init__(StatusCode.NOT_FOUND, detail)


@dataclass
class ClientConfig:
    mode: str = "colocated"  # or "clustered"
    address: str | None = None  # colocated; falls back to env ISF_DB_ADDR
    shard_map: ShardMap | None = None  # clustered; falls back to env ISF_SHARD_MAP
    connect_ms: int = 5000
    request_ms: int = 120000
    max_attempts: int = 10
    backoff_ms: int = 100

    def resolve_shards(self) -> ShardMap:
        if self.mode == "colocated":
            addr = self.address or os.environ.get(ADDR_ENV)
            if not addr:
                raise ConnectError(f"co-located mode needs an address ({ADDR_ENV} unset)")
            return ShardMap((addr,))
        if self.mode == "clustered":
            if self.shard_map is not None:
                return self.shard_map
            spec = os.environ.get(SHARD_MAP_ENV)
            if not spec:
                raise ConnectError(f"clustered mode needs a shard map ({SHARD_MAP_ENV} unset)")
            return ShardMap.parse(spec)
        raise ValueError(f"unknown client mode {self.mode!r}")


@dataclass
class _Conn:
    address: str
    sock: socket.socket


class ClientHandle:
    """Open connections to every shard plus a monotonically increasing request id."""

    def __init__(self, config: ClientConfig, sink: TimingSink | None = None):
        self.config = config
        self.sink = sink
        self.shard_map = config.resolve_shards()
        self._request_id = 0
        self._conns: list[_Conn] = []

    # -- lifecycle ------------------------------------------------------------

    def _dial(self, address: str) -> socket.socket:
        host, _, port = address.rpartition(":")
        last_exc: Exception | None = None
        for attempt in range(self.config.max_attempts):
            try:
                sock = socket.create_connection((host, int(port)),
                                                timeout=self.config.connect_ms / 1000)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                sock.settimeout(self.config.request_ms / 1000)
                return sock
            except OSError as exc:
                last_exc = exc
                time.sleep(self.config.backoff_ms / 1000)
        raise ConnectError(
            f"cannot connect to {address} after {self.config.max_attempts} attempts: {last_exc}"
        )

    def connect(self) -> "ClientHandle":
        t0 = time.perf_counter_ns()
        for addr in self.shard_map.shards:
            sock = self._dial(addr)
            self._conns.append(_Conn(addr, sock))
        for i in range(len(self._conns)):
            self._rpc(i, Command.PING, b"")
        if self.sink:
            self.sink.add("connect", "client_init", 0,
                          (time.perf_counter_ns() - t0) // 1000)
        return self

    def close(self) -> None:
        for c in self._conns:
            try:
                c.sock.close()
            except OSError:
                pass
        self._conns.clear()

    def __enter__(self) -> "ClientHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def connection_count(self) -> int:
        return len(self._conns)

    # -- raw RPC ----------------------------------------------------------------

    def _rpc(self, shard: int, command: Command, payload) -> tuple[StatusCode, "bytes | memoryview"]:
        """Blocking request/response; payload may be bytes or a list of buffers."""
        conn = self._conns[shard]
        self._request_id += 1
        rid = self._request_id
        parts = payload if isinstance(payload, list) else [payload]
        try:
            wire.send_frame(conn.sock, command, rid, parts)
            resp = wire.read_frame(conn.sock, copy=False)
        except socket.timeout as exc:
            raise RequestTimeout(f"{command.name} to {conn.address} timed out") from exc
        except OSError as exc:
            raise ClientError(f"{command.name} to {conn.address} failed: {exc}") from exc
        if resp is None:
            raise ClientError(f"connection to {conn.address} closed by store")
        if resp.command != (command | wire.RESPONSE_FLAG):
            raise ClientError(f"response command {resp.command:#04x} for {command.name}")
        if resp.request_id != rid:
            raise ClientError(f"response id {resp.request_id} != request id {rid}")
        if not len(resp.payload):
            raise ClientError("response missing status byte")
        status = StatusCode(resp.payload[0])
        return status, resp.payload[1:]

    def _shard_of(self, key: str) -> int:
        if self.config.mode == "colocated":
            return 0
        return shard_for_key(key, self.shard_map)

    def _record(self, op: str, component: str, nbytes: int, t0: int) -> None:
        if self.sink:
            self.sink.add(op, component, nbytes, (time.perf_counter_ns() - t0) // 1000)

    @staticmethod
    def _check(status: StatusCode, body):
        if status == StatusCode.OK:
            return body
        detail = bytes(body).decode("utf-8", errors="replace")
        if status == StatusCode.NOT_FOUND:
            raise NotFoundError(detail)
        raise StatusError(status, detail)

    # -- tensor operations --------------------------------------------------------

    def put_tensor(self, key: str, tensor: wire.Tensor, component: str = "send") -> None:
        t0 = time.perf_counter_ns()
        parts = [wire.pack_key(key)] + wire.encode_tensor_parts(tensor)
        status, body = self._rpc(self._shard_of(key), Command.PUT_TENSOR, parts)
        self._record("put_tensor", component, tensor.nbytes, t0)
        self._check(status, body)

    def get_tensor(self, key: str, component: str = "retrieve") -> wire.Tensor:
        t0 = time.perf_counter_ns()
        payload = wire.pack_key(key)
        status, body = self._rpc(self._shard_of(key), Command.GET_TENSOR, payload)
        body = self._check(status, body)
        tensor = wire.decode_tensor(body)
        self._record("get_tensor", component, tensor.nbytes, t0)
        return tensor

    def delete_tensor(self, key: str, component: str = "delete") -> None:
        t0 = time.perf_counter_ns()
        status, body = self._rpc(self._shard_of(key), Command.DEL_TENSOR, wire.pack_key(key))
        self._record("del_tensor", component, 0, t0)
        self._check(status, body)

    def tensor_exists(self, key: str, component: str = "poll") -> bool:
        t0 = time.perf_counter_ns()
        status, body = self._rpc(self._shard_of(key), Command.EXISTS, wire.pack_key(key))
        self._record("exists", component, 0, t0)
        body = self._check(status, body)
        return bool(body and body[0])

    def poll_key(self, key: str, interval_ms: int, max_tries: int) -> bool:
        """True as soon as the key exists; False after max_tries polls."""
        if interval_ms < 1 or max_tries < 1:
            raise ValueError("interval_ms and max_tries must be >= 1")
        for attempt in range(max_tries):
            if self.tensor_exists(key):
                return True
            if attempt < max_tries - 1:
                time.sleep(interval_ms / 1000)
        return False

    # -- metadata -----------------------------------------------------------------

    def put_meta(self, key: str, value: wire.MetaValue, component: str = "meta") -> None:
        t0 = time.perf_counter_ns()
        payload = wire.pack_keyed_blob(key, wire.encode_meta(value))
        status, body = self._rpc(self._shard_of(key), Command.PUT_META, payload)
        self._record("put_meta", component, len(payload), t0)
        self._check(status, body)

    def get_meta(self, key: str, component: str = "meta") -> wire.MetaValue:
        t0 = time.perf_counter_ns()
        status, body = self._rpc(self._shard_of(key), Command.GET_META, wire.pack_key(key))
        self._record("get_meta", component, len(body), t0)
        body = self._check(status, body)
        return wire.decode_meta(body)

    # -- models ---------------------------------------------------------------------

    def set_model(self, name: str, blob: bytes, device_hint: str = "cpu",
                  component: str = "model_load") -> None:
        """Client pre-validates the blob; clustered mode broadcasts to all shards."""
        executors.parse_model(blob, name=name, device_hint=device_hint)
        payload = wire.pack_model_payload(name, device_hint, blob)
        t0 = time.perf_counter_ns()
        if self.config.mode == "clustered":
            targets = range(len(self._conns))
        else:
            targets = [0]
        for shard in targets:
            status, body = self._rpc(shard, Command.SET_MODEL, payload)
            self._check(status, body)
        self._record("set_model", component, len(blob), t0)

    def set_model_from_file(self, name: str, path: str, device_hint: str = "cpu") -> None:
        with open(path, "rb") as fh:
            self.set_model(name, fh.read(), device_hint)

    def get_model(self, name: str, shard: int = 0) -> tuple[str, bytes]:
        status, body = self._rpc(shard, Command.GET_MODEL, wire.pack_key(name))
        body = self._check(status, body)
        return wire.unpack_model_body(body)

    def run_model(self, model_key: str, input_keys: list[str], output_keys: list[str],
                  component: str = "model_eval") -> None:
        if not input_keys or not output_keys:
            raise ClientError("run_model needs at least one input and output key")
        shard = self._shard_of(input_keys[0])
        if self.config.mode == "clustered":
            for k in input_keys[1:] + output_keys:
                if self._shard_of(k) != shard:
                    raise ClientError(
                        f"key '{k}' maps to shard {self._shard_of(k)}, inputs to {shard}; "
                        "all RUN_MODEL keys must live on one shard"
                    )
        t0 = time.perf_counter_ns()
        payload = wire.pack_run_model(model_key, input_keys, output_keys)
        status, body = self._rpc(shard, Command.RUN_MODEL, payload)
        self._record("run_model", component, 0, t0)
        self._check(status, body)

    # -- admin ------------------------------------------------------------------------

    def info(self, shard: int = 0) -> dict[str, wire.MetaValue]:
        status, body = self._rpc(shard, Command.INFO, b"")
        body = self._check(status, body)
        return wire.unpack_meta_map(body)

    def flush_all(self) -> None:
        for shard in range(len(self._conns)):
            status, body = self._rpc(shard, Command.FLUSH, b"")
            self._check(status, body)


def connect(config: ClientConfig | None = None, sink: TimingSink | None = None) -> ClientHandle:
    """Resolve addresses (env or explicit), dial every shard, verify with PING."""
    return ClientHandle(config or ClientConfig(), sink).connect()
