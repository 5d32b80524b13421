"""TCP access to the broker for out-of-process clients.

The listener reuses the length-prefixed JSON frame encoding and speaks a
small request-response protocol: one connect frame carrying
{instance_id, secret}, then pub / sub / next / unsub requests, each
answered by an ack, message, or error frame.  Authorization failures sever
the connection, so a revoked token cannot keep a session alive.
"""

from __future__ import annotations

import socket
import threading
from typing import Any, Optional

from datax.broker import Broker, Message, Subscription
from datax.errors import BrokerError, FrameError, NoSuchSubject, Unauthorized
from datax.frames import FrameConnection


class BrokerListener:
    """Serves broker requests on a loopback TCP socket."""

    def __init__(self, broker: Broker, host: str = "127.0.0.1", port: int = 0):
        self.broker = broker
        self._host = host
        self._port = port
        self._sock: Optional[socket.socket] = None
        self._conns: set[FrameConnection] = set()
        self._lock = threading.Lock()

    def start(self) -> tuple[str, int]:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((self._host, self._port))
        sock.listen(16)
        self._sock = sock
        self._port = sock.getsockname()[1]
        thread = threading.Thread(
            target=self._accept_loop, daemon=True, name="broker-listener"
        )
        thread.start()
        return self.address

    @property
    def address(self) -> tuple[str, int]:
        return (self._host, self._port)

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            conn.close()

    def _accept_loop(self) -> None:
        assert self._sock is not None
        while True:
            try:
                raw, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(
                target=self._serve, args=(raw,), daemon=True,
                name="broker-conn",
            ).start()

    def _serve(self, raw: socket.socket) -> None:
        raw.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn = FrameConnection(raw)
        with self._lock:
            self._conns.add(conn)
        subs: dict[int, Subscription] = {}
        try:
            self._session(conn, subs)
        except (ConnectionError, EOFError, OSError):
            pass
        finally:
            with self._lock:
                self._conns.discard(conn)
            for sub in subs.values():
                self.broker.unsubscribe(sub)
            conn.close()

    def _session(self, conn: FrameConnection, subs: dict[int, Subscription]) -> None:
        try:
            doc = conn.recv(timeout=10.0)
        except (FrameError, socket.timeout):
            return
        if doc.get("type") != "connect":
            self._error(conn, "bad_request", "first frame must be connect")
            return
        creds = doc.get("payload") or {}
        try:
            token = self.broker.token_for_secret(
                str(creds.get("instance_id", "")), str(creds.get("secret", ""))
            )
        except Unauthorized as exc:
            self._error(conn, "unauthorized", str(exc))
            return
        conn.send({"type": "ack", "payload": {"of": "connect"}})

        next_sid = 1
        while True:
            try:
                doc = conn.recv(timeout=None)
            except FrameError:
                self._error(conn, "bad_request", "malformed frame")
                continue
            kind = doc.get("type")
            payload = doc.get("payload") or {}
            if kind == "pub":
                try:
                    seq = self.broker.publish(token, doc.get("stream", ""), payload)
                except Unauthorized as exc:
                    # Sever: a revoked or out-of-scope token ends the session.
                    self._error(conn, "unauthorized", str(exc))
                    return
                except NoSuchSubject as exc:
                    self._error(conn, "no_such_subject", str(exc))
                    continue
                except ValueError as exc:
                    self._error(conn, "bad_request", str(exc))
                    continue
                conn.send({"type": "ack", "payload": {"seq": seq}})
            elif kind == "sub":
                group = payload.get("group") or token.instance_id
                try:
                    sub = self.broker.subscribe(token, doc.get("stream", ""), group)
                except Unauthorized as exc:
                    self._error(conn, "unauthorized", str(exc))
                    return
                except NoSuchSubject as exc:
                    self._error(conn, "no_such_subject", str(exc))
                    continue
                sid = next_sid
                next_sid += 1
                subs[sid] = sub
                conn.send({"type": "ack", "payload": {"sid": sid}})
            elif kind == "next":
                sid = payload.get("sid")
                sub = subs.get(sid)
                if sub is None:
                    self._error(conn, "bad_request", f"unknown sid {sid!r}")
                    continue
                timeout = float(payload.get("timeout_ms", 0)) / 1000.0
                msg = self.broker.next_message(sub, timeout=timeout)
                if msg is not None:
                    conn.send({
                        "type": "message",
                        "stream": msg.stream,
                        "payload": msg.payload,
                        "sid": sid,
                        "seq": msg.seq,
                        "ts": msg.ts,
                    })
                    continue
                conn.send({
                    "type": "ack",
                    "payload": {"sid": sid, "empty": True, "closed": sub.closed},
                })
                if sub.closed:
                    try:
                        self.broker.token_for_secret(token.instance_id, token.secret)
                    except Unauthorized:
                        return
            elif kind == "unsub":
                sid = payload.get("sid")
                sub = subs.pop(sid, None)
                if sub is None:
                    self._error(conn, "bad_request", f"unknown sid {sid!r}")
                    continue
                self.broker.unsubscribe(sub)
                conn.send({"type": "ack", "payload": {"sid": sid}})
            else:
                self._error(conn, "bad_request", f"unexpected frame type {kind!r}")

    @staticmethod
    def _error(conn: FrameConnection, code: str, reason: str) -> None:
        conn.send({"type": "error", "payload": {"code": code, "reason": reason}})


class BrokerClient:
    """Blocking request-response client for :class:`BrokerListener`."""

    def __init__(
        self,
        address: tuple[str, int],
        instance_id: str,
        secret: str,
        connect_timeout: float = 5.0,
    ):
        raw = socket.create_connection(address, timeout=connect_timeout)
        raw.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._conn = FrameConnection(raw)
        self._lock = threading.Lock()
        self._conn.send({
            "type": "connect",
            "payload": {"instance_id": instance_id, "secret": secret},
        })
        self._checked(self._conn.recv(timeout=connect_timeout))

    def _request(self, doc: dict[str, Any], timeout: float) -> dict[str, Any]:
        with self._lock:
            self._conn.send(doc)
            try:
                reply = self._conn.recv(timeout=timeout)
            except EOFError:
                raise ConnectionError("broker connection severed")
        return self._checked(reply)

    @staticmethod
    def _checked(reply: dict[str, Any]) -> dict[str, Any]:
        if reply.get("type") != "error":
            return reply
        payload = reply.get("payload") or {}
        code = payload.get("code")
        reason = payload.get("reason", "broker error")
        if code == "unauthorized":
            raise Unauthorized(reason)
        if code == "no_such_subject":
            raise NoSuchSubject(reason)
        raise BrokerError(reason)

    def publish(self, stream: str, payload: dict[str, Any], timeout: float = 5.0) -> int:
        reply = self._request(
            {"type": "pub", "stream": stream, "payload": payload}, timeout
        )
        return reply["payload"]["seq"]

    def subscribe(self, stream: str, group: Optional[str] = None,
                  timeout: float = 5.0) -> int:
        doc: dict[str, Any] = {"type": "sub", "stream": stream, "payload": {}}
        if group is not None:
            doc["payload"]["group"] = group
        reply = self._request(doc, timeout)
        return reply["payload"]["sid"]

    def next(self, sid: int, timeout: float = 1.0) -> Optional[Message]:
        reply = self._request(
            {"type": "next", "payload": {"sid": sid, "timeout_ms": int(timeout * 1000)}},
            timeout + 5.0,
        )
        if reply["type"] == "message":
            return Message(
                payload=reply["payload"],
                stream=reply["stream"],
                seq=reply["seq"],
                ts=reply["ts"],
            )
        return None

    def unsubscribe(self, sid: int, timeout: float = 5.0) -> None:
        self._request({"type": "unsub", "payload": {"sid": sid}}, timeout)

    def close(self) -> None:
        self._conn.close()
