"""Exception hierarchy shared across the platform.

Every refusal the platform can make is a distinct class so callers (and the
HTTP layer) can map them without string matching.  Each error carries a
``details`` dict with the structured facts behind the refusal.
"""

from __future__ import annotations

from typing import Any


class DataXError(Exception):
    """Base class for all platform errors."""

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.details = details


# --- registry admission errors -------------------------------------------

class RegistryError(DataXError):
    pass


class DuplicateName(RegistryError):
    def __init__(self, kind: str, name: str):
        super().__init__(f"{kind} {name!r} already exists", kind=kind, name=name)


class NotFound(RegistryError):
    def __init__(self, kind: str, name: str):
        super().__init__(f"{kind} {name!r} not found", kind=kind, name=name)


class InUse(RegistryError):
    """Entity deletion refused: sensors/streams/gadgets still reference it."""

    def __init__(self, name: str, referrers: list[str]):
        super().__init__(
            f"{name!r} is in use by: {', '.join(referrers)}",
            name=name, referrers=referrers,
        )
        self.referrers = referrers


class HasDependents(RegistryError):
    """Stream/sensor deletion refused: downstream streams or gadgets consume it."""

    def __init__(self, name: str, dependents: list[str]):
        super().__init__(
            f"{name!r} is input to: {', '.join(dependents)}",
            name=name, dependents=dependents,
        )
        self.dependents = dependents


class DriverMissing(RegistryError):
    def __init__(self, name: str):
        super().__init__(f"driver {name!r} is not installed", name=name)


class AUMissing(RegistryError):
    def __init__(self, name: str):
        super().__init__(f"analytics unit {name!r} is not installed", name=name)


class ActuatorMissing(RegistryError):
    def __init__(self, name: str):
        super().__init__(f"actuator {name!r} is not installed", name=name)


class UnknownInput(RegistryError):
    def __init__(self, missing: list[str]):
        super().__init__(
            f"unknown input stream(s): {', '.join(missing)}", missing=missing
        )
        self.missing = missing


class CycleDetected(RegistryError):
    def __init__(self, name: str):
        super().__init__(f"stream {name!r} would create a cycle", name=name)


class InvalidConfig(RegistryError):
    """Configuration rejected; ``problems`` holds field-level diagnostics."""

    def __init__(self, problems: list[dict[str, str]]):
        summary = "; ".join(f"{p['field']}: {p['detail']}" for p in problems)
        super().__init__(f"invalid configuration: {summary}", problems=problems)
        self.problems = problems


class InvalidSchema(RegistryError):
    def __init__(self, problems: list[str]):
        super().__init__(f"invalid schema: {'; '.join(problems)}", problems=problems)
        self.problems = problems


class IncompatibleUpgrade(RegistryError):
    """Upgrade refused; no registry state was changed."""

    def __init__(self, name: str, failures: list[dict[str, str]]):
        summary = "; ".join(f"{f['owner']}: {f['detail']}" for f in failures)
        super().__init__(
            f"upgrade of {name!r} rejected: {summary}", name=name, failures=failures
        )
        self.failures = failures


# --- broker errors --------------------------------------------------------

class BrokerError(DataXError):
    pass


class NoSuchSubject(BrokerError):
    def __init__(self, subject: str):
        super().__init__(f"no such subject {subject!r}", subject=subject)


class DuplicateSubject(BrokerError):
    def __init__(self, subject: str):
        super().__init__(f"subject {subject!r} already exists", subject=subject)


class SubjectBusy(BrokerError):
    def __init__(self, subject: str, subscriptions: int):
        super().__init__(
            f"subject {subject!r} has {subscriptions} live subscription(s)",
            subject=subject, subscriptions=subscriptions,
        )


class Unauthorized(BrokerError):
    def __init__(self, detail: str):
        super().__init__(f"unauthorized: {detail}")


# --- runner errors --------------------------------------------------------

class RunnerError(DataXError):
    pass


class SpawnFailed(RunnerError):
    def __init__(self, executable: str, reason: str):
        super().__init__(
            f"cannot start {executable!r}: {reason}", executable=executable
        )


class TokenRefused(RunnerError):
    def __init__(self, reason: str):
        super().__init__(f"broker refused token: {reason}")


class HandshakeTimeout(RunnerError):
    def __init__(self, instance_id: str, timeout_s: float):
        super().__init__(
            f"instance {instance_id} did not connect within {timeout_s:g}s",
            instance_id=instance_id,
        )


# --- scheduler ------------------------------------------------------------

class Unschedulable(DataXError):
    """Raised by placement; the reconciler surfaces it as a condition."""

    def __init__(self, workload: str, reason: str):
        super().__init__(
            f"cannot place {workload!r}: {reason}", workload=workload, reason=reason
        )
        self.workload = workload
        self.reason = reason


# --- statestore -----------------------------------------------------------

class StateStoreError(DataXError):
    pass


class NoSuchDatabase(StateStoreError):
    def __init__(self, name: str):
        super().__init__(f"no such database {name!r}", name=name)


class UnknownOwner(StateStoreError):
    def __init__(self, owner: str):
        super().__init__(f"owner {owner!r} is not registered", owner=owner)


# --- wire / manifests -----------------------------------------------------

class FrameError(DataXError):
    pass


class ManifestError(DataXError):
    def __init__(self, message: str, index: int | None = None, line: int | None = None):
        loc = ""
        if index is not None:
            loc = f" (document {index})"
        if line is not None:
            loc += f" (line {line})"
        super().__init__(message + loc, index=index, line=line)
