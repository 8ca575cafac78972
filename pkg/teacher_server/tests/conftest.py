import socket

import pytest

from teacher_server.server import Server, ServerConfig, vla_adapter_stub


class Wire:
    """Minimal line-oriented client for poking the server in tests."""

    def __init__(self, port: int, timeout: float = 5.0):
        self.sock = socket.create_connection(("127.0.0.1", port),
                                             timeout=timeout)
        self._buf = b""

    def send_raw(self, payload):
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        self.sock.sendall(payload)

    def read_line(self) -> bytes:
        while b"\n" not in self._buf:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ConnectionError("server closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def ask(self, payload) -> bytes:
        self.send_raw(payload)
        if not (isinstance(payload, bytes) and payload.endswith(b"\n")) and \
           not (isinstance(payload, str) and payload.endswith("\n")):
            self.send_raw(b"\n")
        return self.read_line()

    def close(self):
        self.sock.close()


@pytest.fixture
def server_factory():
    started = []

    def _start(adapter=vla_adapter_stub, **cfg_kw):
        cfg = ServerConfig(port=0, **cfg_kw)
        server = Server(cfg, adapter).start()
        started.append(server)
        return server

    yield _start
    for server in started:
        server.close()


@pytest.fixture
def wire_factory():
    opened = []

    def _connect(port, timeout=5.0):
        w = Wire(port, timeout=timeout)
        opened.append(w)
        return w

    yield _connect
    for w in opened:
        w.close()
