from __future__ import annotations

import pytest

from isf.client import ClientConfig, connect
from isf.store import ServerConfig, StoreServer


@pytest.fixture
def store_server():
    """In-process store on an ephemeral port; shut down after the test."""
    servers = []

    def factory(**kwargs) -> StoreServer:
        srv = StoreServer("127.0.0.1", 0, ServerConfig(**kwargs))
        srv.start_background()
        servers.append(srv)
        return srv

    yield factory
    for srv in servers:
        srv.shutdown()


@pytest.fixture
def store_client(store_server):
    """(server, connected co-located client) pair."""
    srv = store_server()
    handle = connect(ClientConfig(mode="colocated", address=srv.address))
    yield srv, handle
    handle.close()
