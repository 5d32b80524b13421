"""Length-prefixed frame codec for all local IPC.

Wire format: 4-byte big-endian unsigned length, then that many bytes of
UTF-8 canonical JSON (sorted keys, no whitespace).  Canonical encoding makes
transcripts byte-comparable, which the SDK conformance suite relies on.

Frame documents carry a ``type`` tag.  Runner<->SDK traffic uses
{config, message, emit, ack, error} plus the key-value extension group
{db_put, db_get, db_scan, db_delete}; the broker's TCP listener reuses the
same encoding with its own type tags.
"""

from __future__ import annotations

import json
import socket
import struct
from typing import Any, Optional

from datax.errors import FrameError

MAX_FRAME_BYTES = 16 * 1024 * 1024

FRAME_TYPES = (
    "config", "message", "emit", "ack", "error",
    "db_put", "db_get", "db_scan", "db_delete",
)


def encode_doc(doc: dict[str, Any]) -> bytes:
    """Canonical JSON bytes for a frame body."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_frame(doc: dict[str, Any]) -> bytes:
    body = encode_doc(doc)
    if len(body) > MAX_FRAME_BYTES:
        raise FrameError(f"frame body of {len(body)} bytes exceeds limit")
    return struct.pack(">I", len(body)) + body


def decode_body(body: bytes) -> dict[str, Any]:
    """Parse a frame body; raises FrameError on malformed input."""
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"frame body is not canonical JSON: {exc}")
    if not isinstance(doc, dict) or not isinstance(doc.get("type"), str):
        raise FrameError("frame body lacks a type tag")
    return doc


class FrameConnection:
    """Blocking frame reader/writer over a connected stream socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock

    def send(self, doc: dict[str, Any]) -> None:
        try:
            self._sock.sendall(encode_frame(doc))
        except OSError as exc:
            raise ConnectionError(f"frame send failed: {exc}") from exc

    def recv(self, timeout: Optional[float] = None) -> dict[str, Any]:
        """Read one frame.  Raises EOFError on orderly close,
        socket.timeout when ``timeout`` elapses, FrameError on garbage."""
        self._sock.settimeout(timeout)
        header = self._recv_exact(4)
        (length,) = struct.unpack(">I", header)
        if length > MAX_FRAME_BYTES:
            raise FrameError(f"frame length {length} exceeds limit")
        body = self._recv_exact(length)
        return decode_body(body)

    def _recv_exact(self, n: int) -> bytes:
        chunks = b""
        while len(chunks) < n:
            chunk = self._sock.recv(n - len(chunks))
            if not chunk:
                raise EOFError("connection closed")
            chunks += chunk
        return chunks

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
