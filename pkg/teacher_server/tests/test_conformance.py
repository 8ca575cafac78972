"""Byte-exact conformance against the frozen wire transcript.

The transcript is shared with the client package's test suite (it lives in
the sibling tree) and pins both happy-path responses and the full error
contract. All rows run over a single connection, which also proves that
error responses leave the connection usable.
"""

import json
from pathlib import Path

TRANSCRIPT = (Path(__file__).resolve().parents[2]
              / "tests" / "data" / "golden_transcript.jsonl")


def test_transcript_matches_byte_for_byte(server_factory, wire_factory):
    rows = [json.loads(line) for line in
            TRANSCRIPT.read_text(encoding="utf-8").splitlines()]
    assert len(rows) == 10
    server = server_factory(preset="oracle")
    wire = wire_factory(server.port)
    for row in rows:
        got = wire.ask(row["request"])
        assert got == row["response"].encode("utf-8"), (
            f"for request {row['request']!r}")


def test_transcript_covers_the_error_contract():
    rows = [json.loads(line) for line in
            TRANSCRIPT.read_text(encoding="utf-8").splitlines()]
    errors = {json.loads(r["response"]).get("error")
              for r in rows if r["kind"] == "error"}
    assert errors == {"malformed request", "bad state",
                      "unknown instruction", "unsupported version"}
