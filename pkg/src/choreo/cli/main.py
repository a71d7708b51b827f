"""Command line client.

Thin by construction: each subcommand reads the configuration file, posts
it to the service (in process by default, over HTTP with --server), and
writes the returned records as NDJSON or CSV.  Exit status: 0 when all
checks passed, 2 when a physics check failed or a sweep cell errored,
1 on usage or configuration problems.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import io
import json
import logging
import os
import sys

import httpx

SUBCOMMANDS = ("simulate", "average", "minimize", "nondeg", "billiard",
               "sweep", "scaling")

log = logging.getLogger("choreo")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="choreo",
                     description="stable-motion toolkit front end")
    sub = parser.add_subparsers(dest="command")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} operation")
        p.add_argument("--config", required=True,
                       help="configuration file (key = value lines)")
        p.add_argument("--out", default=None,
                       help="output path (default: stdout)")
        p.add_argument("--seed", type=int, default=None,
                       help="override run.seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads for sweeps and multi-starts")
        p.add_argument("--format", choices=("ndjson", "csv"),
                       default="ndjson")
        p.add_argument("--server", default=None,
                       help="base URL of a running service "
                            "(default: in-process)")
    return parser


async def _post(server: str | None, command: str, payload: dict):
    if server:
        async with httpx.AsyncClient(base_url=server, timeout=None) as client:
            return await client.post(f"/{command}", json=payload)
    from .service import app
    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(transport=transport, timeout=None,
                                 base_url="http://choreo.local") as client:
        return await client.post(f"/{command}", json=payload)


def _write_ndjson(records, fh) -> None:
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _write_csv(records, fh) -> None:
    columns = sorted({key for rec in records for key in rec})
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for rec in records:
        row = []
        for key in columns:
            value = rec.get(key, "")
            if isinstance(value, (dict, list)):
                value = json.dumps(value, sort_keys=True)
            row.append(value)
        writer.writerow(row)


def _emit(records, out_path, fmt) -> None:
    buf = io.StringIO()
    if fmt == "csv":
        _write_csv(records, buf)
    else:
        _write_ndjson(records, buf)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _exit_code(records) -> int:
    for rec in records:
        if "error" in rec or rec.get("passed") is False:
            return 2
    return 0


def main(argv=None) -> int:
    level = os.environ.get("CHOREO_LOG")
    if level:
        logging.basicConfig(level=getattr(logging, level.upper(),
                                          logging.INFO))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1

    try:
        with open(args.config) as fh:
            config_text = fh.read()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    payload = {"config_text": config_text}
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.threads is not None:
        payload["threads"] = args.threads

    log.info("posting %s (%d config bytes)", args.command, len(config_text))
    try:
        resp = asyncio.run(_post(args.server, args.command, payload))
    except httpx.HTTPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        print(f"error: {detail}", file=sys.stderr)
        return 1

    records = resp.json()["records"]
    _emit(records, args.out, args.format)
    return _exit_code(records)


if __name__ == "__main__":
    sys.exit(main())
