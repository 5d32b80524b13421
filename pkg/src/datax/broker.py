"""In-process message bus: subjects, token-scoped access, queue groups.

One subject exists per stream.  Each instance holds a token granting publish
on at most its own output subject and subscribe on its declared inputs.
Within a queue group every published message goes to exactly one member
(round-robin); distinct groups each receive a copy.  Buffers are bounded:
when a member's buffer is full the oldest buffered message is dropped and
accounted, so delivery is at-most-once and the freshest data survives.
"""

from __future__ import annotations

import secrets
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional

from datax.errors import (
    DuplicateSubject,
    NoSuchSubject,
    SubjectBusy,
    Unauthorized,
)

DEFAULT_BUFFER_CAPACITY = 64


@dataclass(frozen=True)
class Message:
    payload: dict[str, Any]
    stream: str
    seq: int
    ts: int  # publish time, milliseconds


@dataclass(frozen=True)
class AccessToken:
    """Grants publish on at most one subject and subscribe on listed ones."""

    instance_id: str
    publish: frozenset[str]
    subscribe: frozenset[str]
    secret: str


class Subscription:
    """One member of a queue group, with a bounded FIFO and drop accounting."""

    def __init__(self, subject: str, group: str, instance_id: str, capacity: int):
        self.subject = subject
        self.group = group
        self.instance_id = instance_id
        self.capacity = capacity
        self.received = 0
        self.dropped = 0
        self.delivered = 0
        self.closed = False
        self._buffer: deque[Message] = deque()
        self._cond = threading.Condition()

    def _offer(self, msg: Message) -> None:
        with self._cond:
            self.received += 1
            if len(self._buffer) >= self.capacity:
                self._buffer.popleft()
                self.dropped += 1
            self._buffer.append(msg)
            self._cond.notify()

    def _close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()

    @property
    def buffered(self) -> int:
        with self._cond:
            return len(self._buffer)

    def stats(self) -> dict[str, int]:
        with self._cond:
            return {
                "received": self.received,
                "dropped": self.dropped,
                "delivered": self.delivered,
                "buffered": len(self._buffer),
                "capacity": self.capacity,
            }


@dataclass
class _Subject:
    name: str
    capacity: int
    seq: int = 0
    groups: dict[str, "_Group"] = field(default_factory=dict)


@dataclass
class _Group:
    name: str
    members: list[Subscription] = field(default_factory=list)
    rr: int = 0


@dataclass
class _TokenInfo:
    token: AccessToken
    active: bool = True


class Broker:
    """Single-process broker; all operations are safe from any thread."""

    def __init__(self, default_capacity: int = DEFAULT_BUFFER_CAPACITY):
        self._lock = threading.RLock()
        self._subjects: dict[str, _Subject] = {}
        self._tokens: dict[str, _TokenInfo] = {}
        self._default_capacity = default_capacity
        self.unauthorized_publishes = 0

    # -- subject lifecycle ---------------------------------------------------

    def create_subject(self, stream: str, buffer_capacity: Optional[int] = None) -> None:
        with self._lock:
            if stream in self._subjects:
                raise DuplicateSubject(stream)
            self._subjects[stream] = _Subject(
                name=stream, capacity=buffer_capacity or self._default_capacity
            )

    def destroy_subject(self, stream: str) -> None:
        with self._lock:
            subject = self._subjects.get(stream)
            if subject is None:
                raise NoSuchSubject(stream)
            live = sum(len(g.members) for g in subject.groups.values())
            if live:
                raise SubjectBusy(stream, live)
            del self._subjects[stream]

    def has_subject(self, stream: str) -> bool:
        with self._lock:
            return stream in self._subjects

    def subject_names(self) -> list[str]:
        with self._lock:
            return sorted(self._subjects)

    def subject_live_subscriptions(self, stream: str) -> int:
        with self._lock:
            subject = self._subjects.get(stream)
            if subject is None:
                raise NoSuchSubject(stream)
            return sum(len(g.members) for g in subject.groups.values())

    # -- tokens ---------------------------------------------------------------

    def issue_token(
        self,
        instance_id: str,
        publish_subject: Optional[str] = None,
        subscribe_subjects: Optional[list[str]] = None,
    ) -> AccessToken:
        """Mint a token scoped to the instance's own streams.

        Reissuing for the same instance invalidates the previous token.
        """
        subscribe_subjects = subscribe_subjects or []
        with self._lock:
            for subject in list(subscribe_subjects) + (
                [publish_subject] if publish_subject else []
            ):
                if subject not in self._subjects:
                    raise NoSuchSubject(subject)
            token = AccessToken(
                instance_id=instance_id,
                publish=frozenset([publish_subject] if publish_subject else []),
                subscribe=frozenset(subscribe_subjects),
                secret=secrets.token_hex(16),
            )
            self._tokens[instance_id] = _TokenInfo(token=token)
            return token

    def revoke_token(self, instance_id: str) -> None:
        """Invalidate the token and sever every subscription using it."""
        with self._lock:
            info = self._tokens.get(instance_id)
            if info is None:
                return
            info.active = False
            for subject in self._subjects.values():
                for group_name in list(subject.groups):
                    group = subject.groups[group_name]
                    for sub in [m for m in group.members
                                if m.instance_id == instance_id]:
                        group.members.remove(sub)
                        sub._close()
                    if not group.members:
                        del subject.groups[group_name]

    def token_for_secret(self, instance_id: str, secret: str) -> AccessToken:
        """Resolve CONNECT-frame credentials (TCP listener path)."""
        with self._lock:
            info = self._tokens.get(instance_id)
            if info is None or not info.active or info.token.secret != secret:
                raise Unauthorized("unknown or revoked credentials")
            return info.token

    def _check(self, token: AccessToken, subject: str, action: str) -> None:
        info = self._tokens.get(token.instance_id)
        if info is None or not info.active or info.token.secret != token.secret:
            raise Unauthorized("token revoked or unknown")
        allowed = token.publish if action == "publish" else token.subscribe
        if subject not in allowed:
            raise Unauthorized(f"token does not allow {action} on {subject!r}")

    # -- messaging -------------------------------------------------------------

    def publish(self, token: AccessToken, subject: str, payload: dict[str, Any]) -> int:
        if not isinstance(payload, dict) or not all(
            isinstance(k, str) for k in payload
        ):
            raise ValueError("payload must be a map with string keys")
        with self._lock:
            try:
                self._check(token, subject, "publish")
            except Unauthorized:
                self.unauthorized_publishes += 1
                raise
            sub_rec = self._subjects.get(subject)
            if sub_rec is None:
                raise NoSuchSubject(subject)
            sub_rec.seq += 1
            msg = Message(
                payload=dict(payload),
                stream=subject,
                seq=sub_rec.seq,
                ts=int(time.time() * 1000),
            )
            for group in sub_rec.groups.values():
                if not group.members:
                    continue
                member = group.members[group.rr % len(group.members)]
                group.rr += 1
                member._offer(msg)
            return msg.seq

    def subscribe(self, token: AccessToken, subject: str, group: str) -> Subscription:
        with self._lock:
            self._check(token, subject, "subscribe")
            sub_rec = self._subjects.get(subject)
            if sub_rec is None:
                raise NoSuchSubject(subject)
            sub = Subscription(
                subject=subject,
                group=group,
                instance_id=token.instance_id,
                capacity=sub_rec.capacity,
            )
            sub_rec.groups.setdefault(group, _Group(name=group)).members.append(sub)
            return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            subject = self._subjects.get(sub.subject)
            if subject is not None:
                group = subject.groups.get(sub.group)
                if group is not None and sub in group.members:
                    group.members.remove(sub)
                    if not group.members:
                        del subject.groups[sub.group]
            sub._close()

    def next_message(
        self, sub: Subscription, timeout: Optional[float] = None
    ) -> Optional[Message]:
        """Pop the next buffered message in FIFO order; None on timeout."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with sub._cond:
            while not sub._buffer:
                if sub.closed:
                    return None
                if deadline is None:
                    sub._cond.wait()
                else:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0 or not sub._cond.wait(remaining):
                        if not sub._buffer:
                            return None
            msg = sub._buffer.popleft()
            sub.delivered += 1
            return msg
