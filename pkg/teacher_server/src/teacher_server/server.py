"""Socket server speaking the teacher wire protocol.

One newline-delimited UTF-8 JSON object per request, one per response, over
a plain stream socket. Every response carries ``"v": 1`` and echoes the
request id when one could be parsed (0 otherwise). Protocol errors produce
an error response and leave the connection open; only EOF, a read timeout,
or a socket failure end a connection. Handlers run one thread per
connection and share nothing, so no locking is needed anywhere.
"""

from __future__ import annotations

import json
import logging
import math
import socket
import threading
from dataclasses import dataclass

import numpy as np

from .oracle import INSTRUCTION_TASKS, PRESETS, oracle_delta, perturb

log = logging.getLogger("teacher_server")

PROTOCOL_VERSION = 1
STATE_DIM = 20
_RNG_TAG = 0x5E4F  # namespaces per-connection noise streams under cfg.seed


@dataclass(frozen=True)
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 0                # 0 lets the OS pick a free port
    preset: str = "oracle"
    seed: int = 0
    max_connections: int = 32
    timeout_s: float = 300.0     # per-request read timeout

    def __post_init__(self):
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port {self.port} out of range")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown teacher preset {self.preset!r}")
        if self.max_connections < 1:
            raise ValueError("max_connections must be >= 1")
        if self.timeout_s <= 0.0:
            raise ValueError("timeout_s must be positive")


def vla_adapter_stub(state: np.ndarray, instruction: str):
    """Mount point for a real model: maps a 20-float state and an instruction
    to a raw (dpos, drot, gripper) suggestion.

    A replacement must be a pure function of its arguments, return within the
    server's per-request timeout, and produce finite 3-vectors with a
    rotation angle strictly below pi and a finite scalar gripper command; the
    server validates the bounds and converts violations or raised exceptions
    into error responses. The instruction is guaranteed to be one of
    INSTRUCTION_TASKS' keys by the time this is called. The default delegates
    to the scripted stage-machine teacher.
    """
    return oracle_delta(state, INSTRUCTION_TASKS[instruction])


def _encode(obj) -> bytes:
    return (json.dumps(obj, separators=(",", ":"), sort_keys=True)
            + "\n").encode("utf-8")


def _error(req_id: int, message: str) -> bytes:
    return _encode({"v": PROTOCOL_VERSION, "id": req_id, "error": message})


def _parse_id(msg) -> int:
    rid = msg.get("id")
    if isinstance(rid, int) and not isinstance(rid, bool):
        return rid
    return 0


def handle_line(line: bytes, preset, rng, adapter) -> bytes:
    """One request in, one response out; never raises."""
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return _error(0, "malformed request")
    if not isinstance(msg, dict):
        return _error(0, "malformed request")
    rid = _parse_id(msg)
    if msg.get("v") != PROTOCOL_VERSION:
        return _error(rid, "unsupported version")
    instruction = msg.get("instruction")
    if instruction not in INSTRUCTION_TASKS:
        return _error(rid, "unknown instruction")
    state = msg.get("state")
    if (not isinstance(state, list) or len(state) != STATE_DIM
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool)
                       and math.isfinite(x) for x in state)):
        return _error(rid, "bad state")
    try:
        dpos, drot, gripper = adapter(np.array(state, dtype=float), instruction)
    except Exception:
        log.exception("adapter failed for request id=%s", rid)
        return _error(rid, "teacher failure")
    dpos = np.asarray(dpos, dtype=float)
    drot = np.asarray(drot, dtype=float)
    try:
        gripper = float(gripper)
    except (TypeError, ValueError):
        return _error(rid, "invalid delta")
    if (dpos.shape != (3,) or drot.shape != (3,)
            or not (np.all(np.isfinite(dpos)) and np.all(np.isfinite(drot))
                    and math.isfinite(gripper))
            or float(np.linalg.norm(drot)) >= math.pi):
        return _error(rid, "invalid delta")
    dpos, drot, gripper = perturb(dpos, drot, gripper, preset, rng)
    return _encode({
        "v": PROTOCOL_VERSION, "id": rid,
        "dpos": [float(x) for x in dpos],
        "drot": [float(x) for x in drot],
        "gripper": float(gripper),
    })


class Server:
    """Listener plus one handler thread per accepted connection."""

    def __init__(self, cfg: ServerConfig, adapter=vla_adapter_stub):
        self.cfg = cfg
        self.adapter = adapter
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._stop = threading.Event()
        self._slots = threading.BoundedSemaphore(cfg.max_connections)
        self._conn_count = 0

    @property
    def port(self) -> int:
        assert self._listener is not None, "server not started"
        return self._listener.getsockname()[1]

    def start(self) -> "Server":
        """Bind and begin accepting; raises OSError if the port is taken."""
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((self.cfg.host, self.cfg.port))
        except OSError:
            listener.close()
            raise
        listener.listen()
        listener.settimeout(0.2)  # lets the accept loop notice shutdown
        self._listener = listener
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="teacher-server-accept",
            daemon=True)
        self._accept_thread.start()
        log.info("listening on %s:%d preset=%s seed=%d",
                 self.cfg.host, self.port, self.cfg.preset, self.cfg.seed)
        return self

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            if not self._slots.acquire(blocking=False):
                log.warning("refusing %s: connection limit reached", addr)
                conn.close()
                continue
            index = self._conn_count
            self._conn_count += 1
            threading.Thread(target=self._handle_connection,
                             args=(conn, addr, index),
                             name=f"teacher-server-conn-{index}",
                             daemon=True).start()

    def _handle_connection(self, conn: socket.socket, addr, index: int):
        preset = PRESETS[self.cfg.preset]
        rng = np.random.default_rng(
            np.random.SeedSequence([self.cfg.seed, _RNG_TAG, index]))
        conn.settimeout(self.cfg.timeout_s)
        buf = b""
        try:
            while not self._stop.is_set():
                while b"\n" not in buf:
                    chunk = conn.recv(65536)
                    if not chunk:
                        return
                    buf += chunk
                line, buf = buf.split(b"\n", 1)
                response = handle_line(line, preset, rng, self.adapter)
                log.info("conn %d from %s: %d bytes in, %d bytes out",
                         index, addr, len(line), len(response))
                conn.sendall(response)
        except (socket.timeout, OSError):
            pass
        finally:
            conn.close()
            self._slots.release()

    def close(self):
        self._stop.set()
        if self._listener is not None:
            self._listener.close()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)


def serve(cfg: ServerConfig, adapter=vla_adapter_stub):
    """Run a server until interrupted (blocking entry point for the CLI)."""
    server = Server(cfg, adapter).start()
    try:
        while True:
            threading.Event().wait(3600.0)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
