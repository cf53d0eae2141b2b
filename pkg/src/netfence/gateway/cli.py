"""``netfence`` command line: serve | sim | fingerprint | rules.

Exit codes: 0 success, 1 domain failure (e.g. lint warnings), 2 usage or
parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional, Sequence

from ..errors import ConfigError, NetfenceError, ParseError
from ..fingerprint import (
    OccurrenceFingerprint,
    SignalVector,
    build_occurrence_fingerprint,
    build_signal_vector,
    euclidean_distance,
    fingerprint_from_json,
    minmax_similarity,
    rank_transform,
    restrict,
    spearman_correlation,
    tanimoto_distance,
)
from ..radio import Scenario, events_to_jsonl
from ..rules import lint_rulebook, parse_rulebook
from .config import Config

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("netfence")


class InputError(Exception):
    """Bad user input; the message already names the file (and line)."""


def _err(msg: str) -> None:
    print(f"netfence: {msg}", file=sys.stderr)


# -- fingerprint -------------------------------------------------------------

def read_scan_log(path: Path) -> list[dict[str, float]]:
    """JSON lines, one scan per line: ``{"scan": {"<ap>": rssi_dbm, ...}}``."""
    scans = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            scan = obj["scan"]
            if not isinstance(scan, dict):
                raise TypeError("'scan' must be an object")
            scans.append({str(ap): float(v) for ap, v in scan.items()})
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{path}:{lineno}: bad scan line: {exc}") from None
    if not scans:
        raise InputError(f"{path}: no scans")
    return scans


def load_fingerprints(path: Path) -> dict[str, Any]:
    """Load a fingerprint JSON file or a scan log; returns the kinds available."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except ValueError:
        obj = None
    if isinstance(obj, dict) and "kind" in obj:
        try:
            fp = fingerprint_from_json(obj)
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from None
        return {"occurrence" if isinstance(fp, OccurrenceFingerprint) else "signal": fp}
    scans = read_scan_log(path)
    return {
        "occurrence": build_occurrence_fingerprint(s.keys() for s in scans),
        "signal": build_signal_vector((ap, v) for s in scans for ap, v in s.items()),
    }


def compare(a: dict[str, Any], b: dict[str, Any]) -> dict[str, Optional[float]]:
    out: dict[str, Optional[float]] = {"minmax": None, "euclidean": None, "tanimoto": None, "spearman": None}
    if "occurrence" in a and "occurrence" in b:
        out["minmax"] = minmax_similarity(a["occurrence"], b["occurrence"])
    if "signal" in a and "signal" in b:
        va: SignalVector = a["signal"]
        vb: SignalVector = b["signal"]
        out["euclidean"] = euclidean_distance(va, vb)
        out["tanimoto"] = tanimoto_distance(va, vb)
        common = va.means.keys() & vb.means.keys()
        if len(common) >= 2:
            out["spearman"] = spearman_correlation(
                rank_transform(restrict(va, common)), rank_transform(restrict(vb, common))
            )
    return out


def cmd_fingerprint(args: argparse.Namespace) -> int:
    if args.action == "build":
        scans = read_scan_log(Path(args.scans))
        if args.kind == "occurrence":
            fp = build_occurrence_fingerprint(s.keys() for s in scans)
        else:
            fp = build_signal_vector((ap, v) for s in scans for ap, v in s.items())
        _write(json.dumps(fp.to_json(), sort_keys=True) + "\n", args.output)
        return EXIT_OK
    report = compare(load_fingerprints(Path(args.a)), load_fingerprints(Path(args.b)))
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


# -- sim / rules -------------------------------------------------------------

def cmd_sim(args: argparse.Namespace) -> int:
    path = Path(args.scenario)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except ValueError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None
    try:
        scenario = Scenario.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: invalid scenario: {exc}") from None
    _write(events_to_jsonl(scenario.run()), args.output)
    return EXIT_OK


def cmd_rules(args: argparse.Namespace) -> int:
    path = Path(args.rulebook)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    try:
        rules = parse_rulebook(text)
    except ParseError as exc:
        raise InputError(f"{path}:{exc.line}:{exc.column}: {exc}") from None
    if args.messages:
        content = json.loads(Path(args.messages).read_text(encoding="utf-8"))
        rules = [replace(r, action=replace(r.action, payload_template=content.get(r.action.message_id, "")))
                 for r in rules]
    warnings = lint_rulebook(rules)
    for w in warnings:
        print(f"{path}: warning: {w}")
    if warnings:
        return EXIT_FAIL
    print(f"{path}: ok, {len(rules)} rule(s)")
    return EXIT_OK


# -- serve -------------------------------------------------------------------

def cmd_serve(args: argparse.Namespace) -> int:
    from .http import make_server
    from .service import Gateway

    if not args.config:
        raise InputError("serve needs --config PATH")
    config = Config.load(args.config)
    gateway = Gateway(config)
    server = make_server(gateway)

    def stop(signum: int, frame: Any) -> None:
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, stop)
    signal.signal(signal.SIGINT, stop)
    print(f"netfence listening on {server.url}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    finally:
        server.server_close()
        gateway.close()
        log.info("state snapshot written to %s", config.data_dir)
    return EXIT_OK


def _write(text: str, output: Optional[str]) -> None:
    if output and output != "-":
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netfence", description="Network-proximity geofencing.")
    p.add_argument("--config", help="service configuration JSON")
    p.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("sim", parents=[common], help="generate a probe-event stream from a scenario file")
    sp.add_argument("scenario")
    sp.add_argument("-o", "--output", help="output file (default stdout)")
    sp.set_defaults(func=cmd_sim)

    sp = sub.add_parser("fingerprint", parents=[common], help="build or compare fingerprints")
    fsub = sp.add_subparsers(dest="action", required=True)
    b = fsub.add_parser("build", parents=[common], help="build a fingerprint from a scan log")
    b.add_argument("scans")
    b.add_argument("--kind", choices=("occurrence", "signal"), default="signal")
    b.add_argument("-o", "--output")
    c = fsub.add_parser("compare", parents=[common], help="print every applicable metric between two inputs")
    c.add_argument("a")
    c.add_argument("b")
    sp.set_defaults(func=cmd_fingerprint)

    sp = sub.add_parser("rules", parents=[common], help="rulebook tools")
    rsub = sp.add_subparsers(dest="action", required=True)
    ck = rsub.add_parser("check", parents=[common], help="parse and lint a rulebook")
    ck.add_argument("rulebook")
    ck.add_argument("--messages", help="message-id -> payload JSON, to check payload sizes")
    sp.set_defaults(func=cmd_rules)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except NetfenceError as exc:
        _err(str(exc))
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
