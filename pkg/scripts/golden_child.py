#!/usr/bin/env python3
"""Scripted instance that records its runner conversation byte for byte.

Launched by record_golden_transcripts.py.  The config payload names the
session to perform; GOLDEN_OUT names the directory for the transcript.
The script speaks the frame protocol directly with no client library, so
the recordings are independent of any SDK implementation.  After each
scripted ack it touches a sync marker so the recorder can feed the next
message without racing the reply.
"""

import json
import os
import pathlib
import socket
import struct
import time


def canonical(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


class Recorder:
    def __init__(self):
        host, port = os.environ["DATAX_SOCKET"].rsplit(":", 1)
        self.sock = socket.create_connection((host, int(port)))
        self.buf = b""
        self.frames = []

    def _read_exact(self, n: int) -> bytes:
        while len(self.buf) < n:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise EOFError("runner closed the connection")
            self.buf += chunk
        out, self.buf = self.buf[:n], self.buf[n:]
        return out

    def recv(self) -> dict:
        header = self._read_exact(4)
        (length,) = struct.unpack(">I", header)
        body = self._read_exact(length)
        doc = json.loads(body.decode("utf-8"))
        self.frames.append({"dir": "rx", "hex": (header + body).hex(), "doc": doc})
        return doc

    def send(self, doc) -> None:
        body = canonical(doc)
        data = struct.pack(">I", len(body)) + body
        self.frames.append({"dir": "tx", "hex": data.hex(), "doc": doc})
        self.sock.sendall(data)


def main():
    out_dir = pathlib.Path(os.environ["GOLDEN_OUT"])
    rec = Recorder()
    config = rec.recv()
    session = config["payload"]["session"]

    def sync(step: int) -> None:
        (out_dir / f"{session}.sync{step}").touch()

    if session == "analytics_exchange":
        rec.recv()
        rec.send({"type": "emit", "payload": {"n": 0, "tag": "alpha"}})
        rec.recv()
        sync(1)
        rec.recv()
        rec.send({"type": "emit", "payload": {"n": 1, "tag": "beta"}})
        rec.recv()
    elif session == "driver_pulse":
        rec.send({"type": "emit", "payload": {"beat": 1}})
        rec.recv()
    elif session == "actuator_sink":
        rec.recv()
        rec.send({"type": "emit", "payload": {"ok": True}})
        rec.recv()
    elif session == "db_roundtrip":
        rec.send({"type": "db_put", "payload": {"db": "cache", "key": "k1", "req": 1, "value": {"v": 1}}})
        rec.recv()
        rec.send({"type": "db_get", "payload": {"db": "cache", "key": "k1", "req": 2}})
        rec.recv()
        rec.send({"type": "db_scan", "payload": {"db": "cache", "prefix": "", "req": 3}})
        rec.recv()
        rec.send({"type": "db_delete", "payload": {"db": "cache", "key": "k1", "req": 4}})
        rec.recv()
        rec.send({"type": "db_get", "payload": {"db": "cache", "key": "k1", "req": 5}})
        rec.recv()
    else:
        raise SystemExit(f"unknown session {session!r}")

    path = out_dir / f"{session}.json"
    path.write_text(
        json.dumps({"session": session, "frames": rec.frames}, indent=2, sort_keys=True) + "\n"
    )
    (out_dir / f"{session}.done").touch()
    while True:
        time.sleep(3600)


if __name__ == "__main__":
    main()
