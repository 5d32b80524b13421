"""HTTP admin API and the `datax` command line client."""

import json
import socket
import time

import pytest
import requests

from conftest import script
from datax import cli
from datax.errors import (
    DataXError,
    DuplicateName,
    HasDependents,
    IncompatibleUpgrade,
    InUse,
    ManifestError,
    NotFound,
    SubjectBusy,
)
from datax.platform import Platform
from datax.runner import RunnerPolicy
from datax.server import ApiServer, error_doc, error_status


def app_text(tmp_path, count=5):
    return f"""\
kind: Driver
metadata:
  name: pulse-driver
spec:
  executable: {script("pulse_driver.py")}
---
kind: AnalyticsUnit
metadata:
  name: echo
spec:
  executable: {script("echo_au.py")}
---
kind: Sensor
metadata:
  name: ticks
spec:
  driver: pulse-driver
  config:
    trigger: {tmp_path / "go"}
    count: {count}
---
kind: Stream
metadata:
  name: echoed
spec:
  analytics_unit: echo
  inputs: [ticks]
  replicas: 1
---
kind: Database
metadata:
  name: scratch
spec:
  owner: echoed
"""


@pytest.fixture
def api(tmp_path):
    platform = Platform(
        tmp_path / "plat",
        runner_policy=RunnerPolicy(monitor_interval_s=0.1,
                                   ipc_lost_grace_s=1.0),
    )
    server = ApiServer(platform).start()
    yield platform, server.url
    server.stop()
    platform.stop()


def converge(plat, timeout=30.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        plat.tick()
        if plat.converged():
            return True
        time.sleep(0.05)
    return plat.converged()


# --- status mapping ---------------------------------------------------------


def test_error_status_mapping():
    assert error_status(NotFound("stream", "x")) == 404
    assert error_status(DuplicateName("driver", "x")) == 409
    assert error_status(InUse("x", ["sensor/y"])) == 409
    assert error_status(HasDependents("x", ["y"])) == 409
    assert error_status(IncompatibleUpgrade("x", [])) == 409
    assert error_status(SubjectBusy("x", 1)) == 409
    assert error_status(DataXError("bad")) == 400
    assert error_status(ManifestError("bad", index=2)) == 400
    assert error_status(ValueError("bad")) == 400
    assert error_status(RuntimeError("boom")) == 500


def test_error_doc_shape():
    doc = error_doc(InUse("cam-driver", ["sensor/cam0"]))
    assert doc["error"]["type"] == "InUse"
    assert doc["error"]["details"]["referrers"] == ["sensor/cam0"]
    assert "cam-driver" in doc["error"]["message"]


# --- HTTP API ---------------------------------------------------------------


def test_apply_and_resource_routes(api, tmp_path):
    plat, url = api
    resp = requests.post(f"{url}/apply", data=app_text(tmp_path).encode())
    assert resp.status_code == 200
    assert resp.json()["counts"] == {"created": 5}

    drivers = requests.get(f"{url}/drivers").json()
    assert [d["name"] for d in drivers] == ["pulse-driver"]

    one = requests.get(f"{url}/drivers/pulse-driver").json()
    assert one["executable"] == script("pulse_driver.py")

    streams = requests.get(f"{url}/streams").json()
    assert sorted(s["name"] for s in streams) == ["echoed", "ticks"]

    databases = requests.get(f"{url}/databases").json()
    assert databases == [{"name": "scratch", "owner": "echoed",
                          "namespace": "scratch"}]

    detail = requests.get(f"{url}/describe/ticks").json()
    assert detail["kind"] == "stream"
    assert detail["dependents"] == ["echoed"]

    metrics = requests.get(f"{url}/streams/echoed/metrics").json()
    assert metrics["stream"] == "echoed"
    assert metrics["totals"]["published"] == 0


def test_http_error_statuses(api, tmp_path):
    plat, url = api
    requests.post(f"{url}/apply", data=app_text(tmp_path).encode())

    resp = requests.get(f"{url}/streams/ghost")
    assert resp.status_code == 404
    assert resp.json()["error"]["type"] == "NotFound"

    resp = requests.delete(f"{url}/drivers/pulse-driver")
    assert resp.status_code == 409
    assert resp.json()["error"]["type"] == "InUse"
    assert resp.json()["error"]["details"]["referrers"] == ["sensor/cam0"
                                                            .replace("cam0",
                                                                     "ticks")]

    resp = requests.post(f"{url}/apply", data=b"kind: [broken")
    assert resp.status_code == 400
    assert resp.json()["error"]["type"] == "ManifestError"

    resp = requests.get(f"{url}/no/such/route/here")
    assert resp.status_code == 404

    resp = requests.put(f"{url}/nodes/ghost")
    assert resp.status_code == 404


def test_http_unexpected_error_is_500(api, monkeypatch):
    plat, url = api
    monkeypatch.setattr(plat, "describe",
                        lambda name: (_ for _ in ()).throw(RuntimeError("boom")))
    resp = requests.get(f"{url}/describe/x")
    assert resp.status_code == 500
    assert resp.json()["error"]["type"] == "RuntimeError"


def test_node_routes(api):
    plat, url = api
    resp = requests.post(f"{url}/nodes", json={
        "node_id": "edge-1", "address": "10.0.0.9:1", "capacity": 4})
    assert resp.status_code == 200
    assert resp.json() == {"registered": "edge-1"}

    assert requests.put(f"{url}/nodes/edge-1").status_code == 200

    nodes = {n["node_id"]: n for n in requests.get(f"{url}/nodes").json()}
    assert nodes["edge-1"]["capacity"] == 4 and nodes["edge-1"]["alive"]

    assert requests.get(f"{url}/conditions").json() == []
    assert requests.get(f"{url}/healthz").json() == {"ok": True}


def test_instance_routes_when_running(api, tmp_path):
    plat, url = api
    requests.post(f"{url}/apply", data=app_text(tmp_path).encode())
    assert converge(plat)

    instances = requests.get(f"{url}/instances").json()
    assert sorted(i["workload"] for i in instances) == [
        "stream/echoed", "stream/ticks"]
    iid = instances[0]["id"]

    health = requests.get(f"{url}/instances/{iid}/health").json()
    assert health == {"id": iid, "state": "running"}

    metrics = requests.get(f"{url}/instances/{iid}/metrics").json()
    assert {"received", "published", "cpu_pct", "rss_bytes"} <= set(metrics)

    logs = requests.get(f"{url}/instances/{iid}/logs").json()
    assert set(logs) == {"stdout", "stderr"}

    assert requests.get(f"{url}/instances/ghost").status_code == 404


# --- CLI --------------------------------------------------------------------


def write_manifest(tmp_path, text):
    path = tmp_path / "app.yaml"
    path.write_text(text)
    return str(path)


def test_cli_apply_and_get(api, tmp_path, capsys):
    plat, url = api
    path = write_manifest(tmp_path, app_text(tmp_path))
    assert cli.main(["--server", url, "apply", "-f", path]) == 0
    out = capsys.readouterr().out
    assert "created   Driver/pulse-driver" in out
    assert "applied 5 document(s): 5 created" in out

    assert cli.main(["--server", url, "get", "streams"]) == 0
    out = capsys.readouterr().out
    assert "NAME" in out and "REPLICAS" in out
    assert "echoed" in out and "ticks" in out

    assert cli.main(["--server", url, "get", "stream", "echoed"]) == 0
    doc = json.loads(capsys.readouterr().out)
    # The CLI surfaces exactly what the HTTP route returns.
    assert doc == requests.get(f"{url}/streams/echoed").json()


def test_cli_apply_with_failures_exits_one(api, tmp_path, capsys):
    plat, url = api
    text = app_text(tmp_path) + """\
---
kind: Stream
metadata:
  name: broken
spec:
  analytics_unit: echo
  inputs: [nope]
"""
    path = write_manifest(tmp_path, text)
    assert cli.main(["--server", url, "apply", "-f", path]) == 1
    out = capsys.readouterr().out
    assert "error     Stream/broken" in out
    assert "UnknownInput" in out


def test_cli_describe_and_delete(api, tmp_path, capsys):
    plat, url = api
    path = write_manifest(tmp_path, app_text(tmp_path))
    cli.main(["--server", url, "apply", "-f", path])
    capsys.readouterr()

    assert cli.main(["--server", url, "describe", "scratch"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["kind"] == "database"

    assert cli.main(["--server", url, "delete", "database", "scratch"]) == 0
    assert "deleted database/scratch" in capsys.readouterr().out

    assert cli.main(["--server", url, "get", "database", "scratch"]) == 1
    assert "NotFound" in capsys.readouterr().err


def test_cli_delete_refusal_exits_one(api, tmp_path, capsys):
    plat, url = api
    path = write_manifest(tmp_path, app_text(tmp_path))
    cli.main(["--server", url, "apply", "-f", path])
    capsys.readouterr()
    assert cli.main(["--server", url, "delete", "driver", "pulse-driver"]) == 1
    err = capsys.readouterr().err
    assert "InUse" in err and "sensor/ticks" in err


def test_cli_logs(api, tmp_path, capsys):
    plat, url = api
    path = write_manifest(tmp_path, app_text(tmp_path))
    cli.main(["--server", url, "apply", "-f", path])
    assert converge(plat)
    capsys.readouterr()
    iid = plat.instances_doc()[0]["id"]
    assert cli.main(["--server", url, "logs", iid]) == 0
    assert cli.main(["--server", url, "logs", "ghost"]) == 1


def test_cli_usage_errors_exit_one(capsys):
    assert cli.main([]) == 1
    assert cli.main(["get"]) == 1
    assert cli.main(["apply"]) == 1
    assert cli.main(["frobnicate"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err


def test_cli_missing_file_exits_one(api, capsys):
    plat, url = api
    assert cli.main(["--server", url, "apply", "-f", "/no/such.yaml"]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_cli_unreachable_server_exits_two(capsys):
    # Bind a port, then close it so nothing listens there.
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    assert cli.main(["--server", f"http://127.0.0.1:{port}",
                     "get", "streams"]) == 2
    assert "cannot reach server" in capsys.readouterr().err


def test_cli_server_error_exits_two(api, monkeypatch, capsys):
    plat, url = api
    monkeypatch.setattr(plat, "describe",
                        lambda name: (_ for _ in ()).throw(RuntimeError("boom")))
    assert cli.main(["--server", url, "describe", "x"]) == 2


def test_cli_reads_server_from_environment(api, tmp_path, monkeypatch, capsys):
    plat, url = api
    monkeypatch.setenv("DATAX_SERVER", url)
    path = write_manifest(tmp_path, app_text(tmp_path))
    assert cli.main(["apply", "-f", path]) == 0
    assert "5 created" in capsys.readouterr().out
