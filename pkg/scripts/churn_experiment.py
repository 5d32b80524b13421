#!/usr/bin/env python3
"""Measure recovery latency while random analytics instances are killed.

Runs a three-hop pipeline under constant load, SIGKILLs a random analytics
instance on a fixed period, and reports how long the reconciler takes to
restore the desired replica counts after each kill.
"""

import argparse
import random
import statistics
import sys
import tempfile
import time
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
SCRIPTS = REPO / "tests" / "fixtures" / "scripts"
sys.path.insert(0, str(REPO / "src"))

from datax.platform import Platform  # noqa: E402
from datax.runner import RunnerPolicy  # noqa: E402

PIPELINE = """\
kind: Driver
metadata:
  name: feed-driver
spec:
  executable: {scripts}/pulse_driver.py
---
kind: AnalyticsUnit
metadata:
  name: relay-unit
spec:
  executable: {scripts}/echo_au.py
---
kind: Actuator
metadata:
  name: sink-unit
spec:
  executable: {scripts}/sink_actuator.py
---
kind: Sensor
metadata:
  name: feed
spec:
  driver: feed-driver
  config:
    trigger: "{trigger}"
    count: 0
    interval_ms: 25
---
kind: Stream
metadata:
  name: relay-a
spec:
  analytics_unit: relay-unit
  inputs: [feed]
  replicas: 2
---
kind: Stream
metadata:
  name: relay-b
spec:
  analytics_unit: relay-unit
  inputs: [relay-a]
  replicas: 2
---
kind: Gadget
metadata:
  name: sink
spec:
  actuator: sink-unit
  inputs: [relay-b]
"""


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--kills", type=int, default=15)
    parser.add_argument("--period", type=float, default=2.0,
                        help="seconds between kills")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    work = Path(tempfile.mkdtemp(prefix="churn-"))
    trigger = work / "flow"
    policy = RunnerPolicy(monitor_interval_s=0.1, ipc_lost_grace_s=1.0)

    with Platform(work / "platform", tick_s=0.2,
                  runner_policy=policy) as plat:
        plat.apply_text(PIPELINE.format(scripts=SCRIPTS, trigger=trigger))
        if not plat.wait_converged(timeout=30.0):
            print("pipeline never converged:", plat.conditions_doc())
            return 1
        trigger.touch()
        time.sleep(1.0)

        latencies = []
        for n in range(args.kills):
            pool = [h for h in plat.runner.instances()
                    if h.entity_kind == "analytics_unit"
                    and h.state == "running"]
            victim = rng.choice(pool)
            victim_id = victim.instance_id
            t_kill = time.monotonic()
            victim.proc.kill()
            while True:
                alive = {h.instance_id for h in plat.runner.instances()}
                if victim_id not in alive and plat.converged():
                    break
                time.sleep(0.02)
            latency = time.monotonic() - t_kill
            latencies.append(latency)
            print(f"kill {n + 1:3d}  {victim.workload:18s}"
                  f"  recovered in {latency * 1000:7.1f} ms")
            time.sleep(max(0.0, args.period - latency))

    print(f"\n{args.kills} kills:"
          f" mean {statistics.mean(latencies) * 1000:.1f} ms,"
          f" p max {max(latencies) * 1000:.1f} ms")
    return 0


if __name__ == "__main__":
    sys.exit(main())
