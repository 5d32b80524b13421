"""`datax` command line client: a thin wrapper over the HTTP API.

Every verb maps to exactly one documented HTTP call.  Exit codes: 0 ok,
1 user error (bad arguments, 4xx responses, refused operations), 2 server
or transport error (connection failure, 5xx responses).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Any, Optional

import requests

DEFAULT_SERVER = "http://127.0.0.1:8300"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract wants 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}", 1)


def _request(method: str, url: str, **kwargs: Any) -> requests.Response:
    try:
        resp = requests.request(method, url, timeout=30, **kwargs)
    except requests.RequestException as exc:
        raise CliError(f"cannot reach server: {exc}", 2)
    if resp.status_code >= 500:
        raise CliError(_error_message(resp), 2)
    if resp.status_code >= 400:
        raise CliError(_error_message(resp), 1)
    return resp


def _error_message(resp: requests.Response) -> str:
    try:
        doc = resp.json()
        err = doc.get("error", {})
        return f"{err.get('type', 'Error')}: {err.get('message', resp.text)}"
    except ValueError:
        return f"HTTP {resp.status_code}: {resp.text[:200]}"


def _table(rows: list[list[str]], header: list[str]) -> str:
    all_rows = [header] + rows
    widths = [max(len(r[i]) for r in all_rows) for i in range(len(header))]
    lines = [
        "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
        for row in all_rows
    ]
    return "\n".join(lines)


def _state_summary(instances: list[dict[str, str]]) -> str:
    counts: dict[str, int] = {}
    for inst in instances:
        counts[inst["state"]] = counts.get(inst["state"], 0) + 1
    return ",".join(f"{n} {s}" for s, n in sorted(counts.items())) or "-"


def cmd_apply(server: str, args: argparse.Namespace) -> int:
    try:
        with open(args.file, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {args.file}: {exc}", 1)
    report = _request("POST", f"{server}/apply", data=text.encode("utf-8")).json()
    failed = 0
    for entry in report["documents"]:
        line = f"{entry['action']:9s} {entry['kind']}/{entry['name']}"
        if entry["action"] == "error":
            failed += 1
            line += f"  ({entry['error']['type']}: {entry['error']['message']})"
        print(line)
    counts = ", ".join(f"{v} {k}" for k, v in sorted(report["counts"].items()))
    print(f"applied {len(report['documents'])} document(s): {counts}")
    return 1 if failed else 0


def cmd_get(server: str, args: argparse.Namespace) -> int:
    if args.name:
        doc = _request("GET", f"{server}/{args.kind}/{args.name}").json()
        print(json.dumps(doc, indent=2, sort_keys=True))
        return 0
    listing = _request("GET", f"{server}/{args.kind}").json()
    if not listing:
        print(f"no {args.kind} registered")
        return 0
    kind = args.kind.strip().lower().replace("-", "_").rstrip("s")
    if kind in ("driver", "analytics_unit", "actuator", "analytic_unit"):
        rows = [[d["name"], str(d["version"]), d["executable"]] for d in listing]
        print(_table(rows, ["NAME", "VERSION", "EXECUTABLE"]))
    elif kind == "sensor":
        rows = [[d["name"], d["driver"], d.get("node_pin") or "-"] for d in listing]
        print(_table(rows, ["NAME", "DRIVER", "PIN"]))
    elif kind == "stream":
        rows = [
            [
                d["name"],
                f"{d['producer_kind']}:{d['producer']}",
                ",".join(d["inputs"]) or "-",
                str(d["replicas"]),
                _state_summary(d.get("instances", [])),
            ]
            for d in listing
        ]
        print(_table(rows, ["NAME", "PRODUCER", "INPUTS", "REPLICAS", "INSTANCES"]))
    elif kind == "gadget":
        rows = [
            [
                d["name"], d["actuator"], ",".join(d["inputs"]) or "-",
                _state_summary(d.get("instances", [])),
            ]
            for d in listing
        ]
        print(_table(rows, ["NAME", "ACTUATOR", "INPUTS", "INSTANCES"]))
    elif kind == "database":
        rows = [[d["name"], d["owner"]] for d in listing]
        print(_table(rows, ["NAME", "OWNER"]))
    else:
        print(json.dumps(listing, indent=2, sort_keys=True))
    return 0


def cmd_describe(server: str, args: argparse.Namespace) -> int:
    doc = _request("GET", f"{server}/describe/{args.name}").json()
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_delete(server: str, args: argparse.Namespace) -> int:
    _request("DELETE", f"{server}/{args.kind}/{args.name}")
    print(f"deleted {args.kind}/{args.name}")
    return 0


def cmd_logs(server: str, args: argparse.Namespace) -> int:
    doc = _request("GET", f"{server}/instances/{args.instance}/logs").json()
    for channel in ("stdout", "stderr"):
        text = doc.get(channel, "")
        if text:
            print(f"--- {channel} ---")
            print(text, end="" if text.endswith("\n") else "\n")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="datax", description="DataX admin client.")
    parser.add_argument(
        "--server",
        default=None,
        help=f"API base URL (default: $DATAX_SERVER or {DEFAULT_SERVER})",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_apply = sub.add_parser("apply", help="apply a manifest file")
    p_apply.add_argument("-f", "--file", required=True)
    p_apply.set_defaults(fn=cmd_apply)

    p_get = sub.add_parser("get", help="list resources of a kind")
    p_get.add_argument("kind")
    p_get.add_argument("name", nargs="?")
    p_get.set_defaults(fn=cmd_get)

    p_desc = sub.add_parser("describe", help="show one resource in detail")
    p_desc.add_argument("name")
    p_desc.set_defaults(fn=cmd_describe)

    p_del = sub.add_parser("delete", help="delete one resource")
    p_del.add_argument("kind")
    p_del.add_argument("name")
    p_del.set_defaults(fn=cmd_delete)

    p_logs = sub.add_parser("logs", help="show an instance's captured output")
    p_logs.add_argument("instance")
    p_logs.set_defaults(fn=cmd_logs)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        server = (
            args.server or os.environ.get("DATAX_SERVER") or DEFAULT_SERVER
        ).rstrip("/")
        return args.fn(server, args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    raise SystemExit(main())
