import pytest

from collatzbench.memstore import EmbeddedStore
from collatzbench.respclient import RespClient
from collatzbench.respserver import RespServer


class BackendHarness:
    """Uniform access to a store backend for contract tests.

    `store` is the main handle. `context_store()` returns a handle suitable
    for another concurrent worker context: the same object for the embedded
    backend, a fresh connection for the wire backend.
    """

    def __init__(self, kind):
        self.kind = kind
        self._extra = []
        if kind == "embedded":
            self.server = None
            self.store = EmbeddedStore()
        else:
            self.server = RespServer(host="127.0.0.1", port=0).start()
            self.store = RespClient(*self.server.address)

    def context_store(self):
        if self.kind == "embedded":
            return self.store
        client = RespClient(*self.server.address)
        self._extra.append(client)
        return client

    def close(self):
        if self.kind == "resp":
            for client in self._extra:
                client.close()
            self.store.close()
            self.server.close()


@pytest.fixture(params=["embedded", "resp"])
def backend(request):
    harness = BackendHarness(request.param)
    yield harness
    harness.close()


@pytest.fixture
def embedded():
    return EmbeddedStore()


@pytest.fixture
def resp_server():
    server = RespServer(host="127.0.0.1", port=0).start()
    yield server
    server.close()


@pytest.fixture
def resp_client(resp_server):
    client = RespClient(*resp_server.address)
    yield client
    client.close()
