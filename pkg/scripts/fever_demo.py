#!/usr/bin/env python3
"""Run the fever-screening pipeline end to end and print what happened.

Starts an embedded platform, applies the application manifests (synthetic
business-logic scripts stand in for real detectors), fires a pulse through
both sensors, then prints per-stream metrics and the database rows.
"""

import argparse
import sys
import tempfile
import time
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
SCRIPTS = REPO / "tests" / "fixtures" / "scripts"
sys.path.insert(0, str(REPO / "src"))

from datax.platform import Platform  # noqa: E402
from datax.runner import RunnerPolicy  # noqa: E402

ENTITIES = """\
kind: AnalyticsUnit
metadata:
  name: face-detector
spec:
  executable: {scripts}/annotate_au.py
  schema:
    field: {{type: string, default: face}}
---
kind: AnalyticsUnit
metadata:
  name: thermal-mapper
spec:
  executable: {scripts}/annotate_au.py
  schema:
    field: {{type: string, default: region}}
---
kind: AnalyticsUnit
metadata:
  name: temp-extractor
spec:
  executable: {scripts}/extract_au.py
  schema:
    base: {{type: float, default: 36.0}}
    modulo: {{type: int, default: 5}}
---
kind: AnalyticsUnit
metadata:
  name: fever-classifier
spec:
  executable: {scripts}/classify_au.py
  schema:
    threshold: {{type: float, default: 38.0}}
---
kind: AnalyticsUnit
metadata:
  name: session-logger
spec:
  executable: {scripts}/log_au.py
  schema:
    db: {{type: string, required: true}}
"""

APPLICATION = """\
kind: Driver
metadata:
  name: camera-driver
spec:
  executable: {scripts}/pulse_driver.py
---
kind: Driver
metadata:
  name: thermal-driver
spec:
  executable: {scripts}/pulse_driver.py
---
kind: Actuator
metadata:
  name: fever-alert
spec:
  executable: {scripts}/sink_actuator.py
---
kind: Sensor
metadata:
  name: cam-front
spec:
  driver: camera-driver
  config:
    trigger: "{trigger}"
    count: {count}
    interval_ms: 25
    label: cam
---
kind: Sensor
metadata:
  name: thermal-cam
spec:
  driver: thermal-driver
  config:
    trigger: "{trigger}"
    count: {count}
    interval_ms: 25
    label: thermal
---
kind: Stream
metadata:
  name: faces
spec:
  analytics_unit: face-detector
  inputs: [cam-front]
  replicas: 2
---
kind: Stream
metadata:
  name: thermal-regions
spec:
  analytics_unit: thermal-mapper
  inputs: [thermal-cam]
  replicas: 2
---
kind: Stream
metadata:
  name: face-temperatures
spec:
  analytics_unit: temp-extractor
  inputs: [faces, thermal-regions]
  replicas: 2
---
kind: Stream
metadata:
  name: screening-decisions
spec:
  analytics_unit: fever-classifier
  inputs: [face-temperatures]
  replicas: 1
---
kind: Stream
metadata:
  name: screening-log
spec:
  analytics_unit: session-logger
  inputs: [screening-decisions]
  replicas: auto
  config:
    db: screening-sessions
---
kind: Gadget
metadata:
  name: alert-panel
spec:
  actuator: fever-alert
  inputs: [screening-log]
---
kind: Database
metadata:
  name: screening-sessions
spec:
  owner: screening-log
"""

STREAMS = ("cam-front", "thermal-cam", "faces", "thermal-regions",
           "face-temperatures", "screening-decisions", "screening-log")


def gadget_received(plat, name):
    ids = [e["id"] for e in plat.instances_doc()
           if e["workload"] == f"gadget/{name}"]
    return sum(plat.instance_metrics(i)["received"] for i in ids)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=50,
                        help="messages pulsed per sensor")
    parser.add_argument("--data-dir", default=None,
                        help="storage root (default: a fresh temp dir)")
    parser.add_argument("--settle", type=float, default=2.0,
                        help="quiescence window after the pulse, seconds")
    args = parser.parse_args()

    work = Path(args.data_dir) if args.data_dir else Path(
        tempfile.mkdtemp(prefix="fever-demo-"))
    trigger = work / "pulse-now"
    policy = RunnerPolicy(monitor_interval_s=0.1, ipc_lost_grace_s=2.0)

    with Platform(work / "platform", tick_s=0.25,
                  runner_policy=policy) as plat:
        for text in (ENTITIES.format(scripts=SCRIPTS),
                     APPLICATION.format(scripts=SCRIPTS, trigger=trigger,
                                        count=args.count)):
            report = plat.apply_text(text)
            counts = ", ".join(f"{v} {k}" for k, v in
                               sorted(report["counts"].items()))
            print(f"applied {len(report['documents'])} document(s): {counts}")

        print("waiting for instances ...", flush=True)
        if not plat.wait_converged(timeout=60.0):
            print("instances never converged:", plat.conditions_doc())
            return 1
        for entry in plat.instances_doc():
            print(f"  {entry['state']:8s} {entry['workload']:32s}"
                  f" {entry['id']}")

        print(f"\npulsing {args.count} messages per sensor ...", flush=True)
        trigger.touch()
        last = -1
        quiet_since = time.monotonic()
        while time.monotonic() - quiet_since < args.settle:
            now = gadget_received(plat, "alert-panel")
            if now != last:
                last, quiet_since = now, time.monotonic()
            time.sleep(0.1)

        print(f"\n{'stream':22s} {'recv':>6s} {'pub':>6s} {'drop':>6s}")
        for stream in STREAMS:
            totals = plat.stream_metrics(stream)["totals"]
            print(f"{stream:22s} {totals['received']:6d}"
                  f" {totals['published']:6d} {totals['dropped']:6d}")
        print(f"{'alert-panel (gadget)':22s} {last:6d}")

        rows = plat.statestore.kv_scan("screening-sessions", "")
        print(f"\nscreening-sessions: {len(rows)} rows")
        for key, value in rows[:5]:
            print(f"  {key:24s} {value}")
        if len(rows) > 5:
            print(f"  ... {len(rows) - 5} more")
    return 0


if __name__ == "__main__":
    sys.exit(main())
