#!/usr/bin/env python3
"""Record reference runner conversations for the SDK conformance suite.

Each session launches the scripted child in golden_child.py under a real
runner and lets it log every frame in both directions.  The committed
transcripts pin the wire contract: a client library in any language that
reproduces the tx bytes when fed the rx bytes is interchangeable with the
recorded one.  Run from the repository root after protocol changes, then
review the diff under sdk/tests/golden/.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from datax.broker import Broker
from datax.registry import EntityRecord
from datax.runner import Runner, RunnerPolicy
from datax.statestore import StateStore

CHILD = REPO / "scripts" / "golden_child.py"
DEFAULT_OUT = REPO / "sdk" / "tests" / "golden"


@dataclass(frozen=True)
class Session:
    """One scripted conversation; feeds are published at child sync points."""

    name: str
    kind: str
    config: dict[str, Any]
    inputs: tuple[str, ...]
    output: Optional[str]
    feeds: tuple[dict[str, Any], ...] = field(default=())


SESSIONS = (
    Session(
        "analytics_exchange", "analytics_unit",
        {"fps": 15, "session": "analytics_exchange"},
        ("frames-in",), "frames-out", ({"i": 0}, {"i": 1}),
    ),
    Session(
        "driver_pulse", "driver",
        {"session": "driver_pulse"}, (), "pulse",
    ),
    Session(
        "actuator_sink", "actuator",
        {"label": "sink", "session": "actuator_sink"},
        ("commands",), None, ({"cmd": "stop"},),
    ),
    Session(
        "db_roundtrip", "analytics_unit",
        {"db": "cache", "session": "db_roundtrip"},
        ("kv-in",), "kv-out",
    ),
)


def wait_for(path: Path, timeout: float = 15.0) -> None:
    deadline = time.monotonic() + timeout
    while not path.exists():
        if time.monotonic() > deadline:
            raise TimeoutError(f"timed out waiting for {path.name}")
        time.sleep(0.02)


def record_session(runner: Runner, broker: Broker, session: Session, out_dir: Path) -> dict:
    for marker in out_dir.glob(f"{session.name}.sync*"):
        marker.unlink()
    done = out_dir / f"{session.name}.done"
    done.unlink(missing_ok=True)

    entity = EntityRecord(
        name=f"golden-{session.name}", kind=session.kind,
        executable=f"{sys.executable} {CHILD}",
    )
    handle = runner.launch_instance(
        entity, session.config, list(session.inputs), session.output,
        instance_id=f"golden-{session.name}",
    )
    try:
        feeder = None
        if session.feeds:
            feeder = broker.issue_token(
                f"feeder-{session.name}", publish_subject=session.inputs[0]
            )
        for step, payload in enumerate(session.feeds, start=1):
            broker.publish(feeder, session.inputs[0], payload)
            if step < len(session.feeds):
                wait_for(out_dir / f"{session.name}.sync{step}")
        wait_for(done)
    finally:
        runner.stop_instance(handle, grace_ms=0)
        done.unlink(missing_ok=True)
        for marker in out_dir.glob(f"{session.name}.sync*"):
            marker.unlink()

    doc = json.loads((out_dir / f"{session.name}.json").read_text())
    for frame in doc["frames"]:
        assert bytes.fromhex(frame["hex"]), "empty frame recorded"
    return doc


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    os.environ["GOLDEN_OUT"] = str(args.out)

    with tempfile.TemporaryDirectory() as tmp:
        broker = Broker()
        store = StateStore(Path(tmp) / "state")
        store.create_database("cache", owner="golden-db_roundtrip")
        runner = Runner(
            broker, statestore=store, data_dir=Path(tmp) / "instances",
            policy=RunnerPolicy(monitor_interval_s=0.2),
        )
        for subject in ("frames-in", "frames-out", "pulse", "commands", "kv-in", "kv-out"):
            broker.create_subject(subject)
        for session in SESSIONS:
            doc = record_session(runner, broker, session, args.out)
            rx = sum(1 for f in doc["frames"] if f["dir"] == "rx")
            tx = len(doc["frames"]) - rx
            total = sum(len(f["hex"]) // 2 for f in doc["frames"])
            print(f"{session.name:<20} {rx} rx / {tx} tx frames, {total} bytes")


if __name__ == "__main__":
    main()
