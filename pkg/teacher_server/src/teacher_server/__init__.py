"""Reference implementation of the teacher wire protocol.

Serves scripted-teacher action deltas over newline-delimited JSON on a
stream socket, independently of the training package that consumes them.
"""

from .oracle import INSTRUCTION_TASKS, PRESETS, TeacherPreset, oracle_delta
from .server import Server, ServerConfig, serve, vla_adapter_stub

__all__ = [
    "INSTRUCTION_TASKS", "PRESETS", "TeacherPreset", "oracle_delta",
    "Server", "ServerConfig", "serve", "vla_adapter_stub",
]
