"""Acceptance criteria, one test per criterion, each with its runtime bound."""

from __future__ import annotations

import json
import logging
import random
import re
import threading
import time
from datetime import time as clock
from pathlib import Path

import numpy as np
import pytest

import netfence.rules.evaluator as rule_eval
from netfence.dispatch import Dispatcher, MockTransport, Outcome, PushMessage, SubscriptionStore, Topic
from netfence.fence import NetworkFence, ProximityState, closeness, step
from netfence.fingerprint import (
    OccurrenceFingerprint,
    SignalVector,
    euclidean_distance,
    minmax_similarity,
    rank_transform,
    spearman_correlation,
    tanimoto_distance,
)
from netfence.gateway import Config, Gateway
from netfence.gateway.http import make_server
from netfence.radio import DevicePath, run_scenario
from netfence.rules import (
    ActionSpec,
    And,
    Client,
    EvaluationContext,
    FirstVisit,
    RssiIn,
    Rule,
    TimeBetween,
    Visible,
    evaluate,
    format_rule,
    lint_rulebook,
    parse_rule,
)
from netfence.tracker import Tracker, hash_mac, window_aggregate

from apiclient import call
from conftest import COUPON_RULES, DAY_S, MAC_A, MAC_B, SALT, CouponWorld
from gen import all_trees, random_rule
from oracles import RefMachine, all_sequences, minmax_naive, tanimoto_naive

criterion = pytest.mark.criterion


def elapsed(t0: float) -> float:
    return time.perf_counter() - t0


def random_rssi_map(rng: random.Random, lo=1, hi=8) -> dict:
    aps = rng.sample([f"ap{i}" for i in range(12)], rng.randint(lo, hi))
    return {ap: rng.uniform(-95, -30) for ap in aps}


def random_fractions(rng: random.Random, names) -> dict:
    return {ap: rng.uniform(0.01, 1.0) for ap in rng.sample(names, rng.randint(1, min(8, len(names))))}


# 1 ---------------------------------------------------------------------------

@criterion(1, "rank_transform(-20, -90, -40) == (1, 3, 2), < 1 ms")
def test_c1_rank_micro_example():
    v = SignalVector({"A": -20.0, "B": -90.0, "C": -40.0})
    t0 = time.perf_counter()
    r = rank_transform(v)
    dt = elapsed(t0)
    assert (r.ranks["A"], r.ranks["B"], r.ranks["C"]) == (1, 3, 2)
    assert dt < 1e-3, dt


# 2 ---------------------------------------------------------------------------

@criterion(2, "metric identities on 500 vectors and 500 fingerprint pairs, < 5 s")
def test_c2_metric_identities():
    rng = random.Random(2)
    t0 = time.perf_counter()
    for _ in range(500):
        v = SignalVector(random_rssi_map(rng))
        assert euclidean_distance(v, v) == 0.0
        assert abs(tanimoto_distance(v, v)) <= 1e-9
        w = SignalVector(random_rssi_map(rng, lo=2))
        assert spearman_correlation(rank_transform(w), rank_transform(w)) == pytest.approx(1.0, abs=1e-9)
    names = [f"ap{i}" for i in range(16)]
    for i in range(500):
        f1 = OccurrenceFingerprint(random_fractions(rng, names), 10)
        f2 = OccurrenceFingerprint(random_fractions(rng, names), 10)
        assert abs(minmax_similarity(f1, f2) - minmax_similarity(f2, f1)) <= 1e-9
        left = rng.sample(names, 8)
        right = [n for n in names if n not in left]
        d1 = OccurrenceFingerprint(random_fractions(rng, left), 10)
        d2 = OccurrenceFingerprint(random_fractions(rng, right), 10)
        assert minmax_similarity(d1, d2) == 0.0
    dt = elapsed(t0)
    assert dt < 5.0, dt


# 3 ---------------------------------------------------------------------------

@criterion(3, "minmax and tanimoto agree with brute-force oracles on 1000 pairs, tol 1e-9, < 5 s")
def test_c3_oracle_equivalence():
    rng = random.Random(3)
    names = [f"ap{i}" for i in range(12)]
    t0 = time.perf_counter()
    for _ in range(1000):
        a, b = random_fractions(rng, names), random_fractions(rng, names)
        got = minmax_similarity(OccurrenceFingerprint(a, 1), OccurrenceFingerprint(b, 1))
        assert abs(got - minmax_naive(a, b)) <= 1e-9
        va, vb = random_rssi_map(rng), random_rssi_map(rng)
        assert abs(tanimoto_distance(SignalVector(va), SignalVector(vb)) - tanimoto_naive(va, vb)) <= 1e-9
    dt = elapsed(t0)
    assert dt < 5.0, dt


# 4 ---------------------------------------------------------------------------

LEAF_STUBS = [
    lambda: Visible("v"),
    lambda: RssiIn("r", -80, -40),
    lambda: TimeBetween(clock(9), clock(17)),
    lambda: FirstVisit(),
    lambda: Client("c*"),
]


def _leaves(node):
    kids = [getattr(node, a) for a in ("left", "right", "child") if hasattr(node, a)]
    return [node] if not kids else [leaf for k in kids for leaf in _leaves(k)]


def _truth_table(node, positions, n):
    """Bitmask over all 2**n leaf assignments; bit k is the value under assignment k."""
    full = (1 << (1 << n)) - 1
    if hasattr(node, "child"):
        return full & ~_truth_table(node.child, positions, n)
    if hasattr(node, "left"):
        lt, rt = _truth_table(node.left, positions, n), _truth_table(node.right, positions, n)
        return lt & rt if type(node).__name__ == "And" else lt | rt
    i = positions[id(node)]
    return sum(1 << k for k in range(1 << n) if (k >> i) & 1)


@criterion(4, "evaluate matches exhaustive truth tables for all trees with <= 3 stub leaves, < 10 s")
def test_c4_truth_table(monkeypatch):
    assignment: dict[int, bool] = {}
    monkeypatch.setattr(rule_eval, "evaluate_predicate", lambda node, ctx, rule: assignment[id(node)])
    ctx = EvaluationContext()
    action = ActionSpec("m")
    t0 = time.perf_counter()
    trees = checked = 0
    for tree in all_trees(LEAF_STUBS, 3):
        leaves = _leaves(tree)
        n = len(leaves)
        positions = {id(leaf): i for i, leaf in enumerate(leaves)}
        assert len(positions) == n
        table = _truth_table(tree, positions, n)
        rule = Rule("r", tree, action)
        for k in range(1 << n):
            for leaf, i in positions.items():
                assignment[leaf] = bool((k >> i) & 1)
            assert evaluate(rule, ctx) == bool((table >> k) & 1)
            checked += 1
        trees += 1
    dt = elapsed(t0)
    assert trees == 32410 and checked > 250_000
    assert dt < 10.0, dt


# 5 ---------------------------------------------------------------------------

COUPON = "RULE coupon: IF IS_VISIBLE('mycafe') AND FIRST_VISIT() THEN PRESENT coupon1"


@criterion(5, "1000 generated rules round-trip; coupon rule parses and lints clean, < 5 s")
def test_c5_round_trip():
    rng = random.Random(5)
    t0 = time.perf_counter()
    for _ in range(1000):
        r = random_rule(rng)
        assert parse_rule(format_rule(r)) == r
    coupon = parse_rule(COUPON)
    assert coupon == Rule("coupon", And(Visible("mycafe"), FirstVisit()), ActionSpec("coupon1"))
    assert lint_rulebook([coupon]) == []
    dt = elapsed(t0)
    assert dt < 5.0, dt


# 6 ---------------------------------------------------------------------------

@criterion(6, "fence state machine matches reference machine on all sequences, Enter/Exit alternate, < 10 s")
def test_c6_state_machine():
    ref_fp = SignalVector({"a": -50.0})
    mid = 0.55
    t0 = time.perf_counter()
    cases = 0
    for confirm in (1, 2, 3):
        fence = NetworkFence("f", ref_fp, confirm_count=confirm)
        assert fence.exit_threshold < mid < fence.enter_threshold
        for seq in all_sequences((0.0, mid, 1.0), 6):
            ref = RefMachine(fence.enter_threshold, fence.exit_threshold, confirm, fence.min_dwell_s * 1000)
            state = ProximityState("d", "f")
            got, want = [], []
            for i, c in enumerate(seq):
                t = i * 10_000  # 10 s apart so Dwell is reachable
                state, evs = step(state, c, t, fence)
                got += [e.kind.value for e in evs]
                want += ref.feed(c, t)
            assert got == want, (confirm, seq)
            edges = [e for e in got if e != "Dwell"]
            assert all(x != y for x, y in zip(edges, edges[1:]))
            assert not edges or edges[0] == "Enter"
            cases += 1
    dt = elapsed(t0)
    assert cases == 3 * sum(3 ** n for n in range(1, 7))
    assert dt < 10.0, dt


# 7 and 9 ---------------------------------------------------------------------

class Collector(logging.Handler):
    def __init__(self):
        super().__init__(logging.DEBUG)
        self.lines: list[str] = []

    def emit(self, record):
        self.lines.append(self.format(record))


def _run_coupon(root: Path, rules_text: str = COUPON_RULES):
    """Scenario 7 through the HTTP API. Returns everything needed by criteria 7 and 9."""
    world = CouponWorld(root)
    cfg_path = world.write_config()
    (root / "rules.txt").write_text(rules_text)
    gw = Gateway(Config.load(cfg_path), salt=SALT, sleep=lambda s: None)
    server = make_server(gw, ("127.0.0.1", 0))
    threading.Thread(target=server.serve_forever, daemon=True).start()
    bodies: list[bytes] = []
    a, b = hash_mac(MAC_A, SALT), hash_mac(MAC_B, SALT)

    def api(method, path, body=None):
        status, obj, raw = call(server.url, method, path, body)
        bodies.append(raw)
        return status, obj

    fence_events = []
    try:
        assert api("POST", "/v1/subscriptions", {"topic_id": "old-cafe", "device_id": a, "token": "tok-a"})[0] == 201
        # plant malformed variants too: error bodies must not echo them
        api("POST", "/v1/subscriptions", {"topic_id": "old-cafe", "device_id": MAC_B, "token": "tok-b"})
        api("POST", "/v1/events", {"tracker": "cafe-t1", "mac": MAC_B.upper() + ":00", "rssi": -50, "t": 0})
        events = world.events()
        for i in range(0, len(events), 25):
            batch = [e.to_json() for e in events[i:i + 25]]
            for j, ev in enumerate(batch):
                if j % 2:
                    ev["mac"] = ev["mac"].upper().replace(":", "-")
            status, obj = api("POST", "/v1/events", batch)
            assert status == 202 and obj["rejected"] == []
            fence_events += obj["fence_events"]
        api("GET", "/v1/deliveries?since=0")
        api("GET", "/v1/fences/cafe-door/devices")
        api("POST", "/v1/admin/reload")
    finally:
        server.shutdown()
        server.server_close()
        gw.close()
    return {"world": world, "gw": gw, "a": a, "b": b, "fence_events": fence_events, "bodies": bodies}


@pytest.fixture(scope="module")
def coupon_run(tmp_path_factory):
    collector = Collector()
    collector.setFormatter(logging.Formatter("%(name)s %(levelname)s %(message)s"))
    root = logging.getLogger()
    old_level = root.level
    root.addHandler(collector)
    root.setLevel(logging.DEBUG)
    try:
        t0 = time.perf_counter()
        first = _run_coupon(tmp_path_factory.mktemp("coupon1"))
        second = _run_coupon(tmp_path_factory.mktemp("coupon2"))
        control = _run_coupon(tmp_path_factory.mktemp("control"),
                              COUPON_RULES.replace(" AND FIRST_VISIT()", ""))
        dt = elapsed(t0)
    finally:
        root.removeHandler(collector)
        root.setLevel(old_level)
    return {"runs": (first, second), "control": control, "seconds": dt, "log": collector.lines}


def _split(run):
    """Fence events and accepted pushes, split into first pass and second pass."""
    boundary = 1_700_000_000_000 + DAY_S * 1000
    evs = run["fence_events"]
    pushes = run["gw"].transport.accepted
    return (
        [e for e in evs if e["t_unix_ms"] < boundary],
        [e for e in evs if e["t_unix_ms"] >= boundary],
        [p for p in pushes if p["t_unix_ms"] < boundary],
        [p for p in pushes if p["t_unix_ms"] >= boundary],
    )


@criterion(7, "end-to-end coupon scenario: one Enter and one push for A, none for B or the second pass, < 30 s")
def test_c7_coupon_scenario(coupon_run):
    first, second = coupon_run["runs"]
    a, b = first["a"], first["b"]
    ev1, ev2, push1, push2 = _split(first)
    kinds = lambda evs, dev: [e["kind"] for e in evs if e["device"] == dev]  # noqa: E731
    assert kinds(ev1, a).count("Enter") == 1
    assert len(push1) == 1 and push1[0]["token"] == "tok-a"
    assert all(p["token"] == "tok-a" for p in first["gw"].transport.records)
    messages = [m for r in first["gw"].deliveries(0) for m in r["messages"]]
    assert len(messages) == 1  # A's coupon; B never produces a message
    assert kinds(ev1, b).count("Enter") == 1  # B was seen, just not subscribed
    # second pass: A is near the shop again but FIRST_VISIT suppresses the push
    assert kinds(ev2, a).count("Enter") == 1
    assert push2 == []
    assert len(first["gw"].transport.accepted) == 1
    # control: the same world without FIRST_VISIT pushes again on the second pass
    assert len(_split(coupon_run["control"])[3]) == 1
    # deterministic
    assert first["fence_events"] == second["fence_events"]
    assert first["gw"].transport.records == second["gw"].transport.records
    assert first["gw"].event_log.read_all() == second["gw"].event_log.read_all()
    assert coupon_run["seconds"] / 3 < 30.0, coupon_run["seconds"]


def _mac_patterns():
    pats = []
    for mac in (MAC_A, MAC_B):
        octets = mac.split(":")
        for sep in (":", "-", ""):
            pats.append(re.escape(sep.join(octets)))
    return re.compile("|".join(pats).encode(), re.IGNORECASE)


@criterion(9, "privacy sweep finds no planted MAC in files, logs, API bodies or transport records, < 5 s")
def test_c9_privacy_sweep(coupon_run):
    t0 = time.perf_counter()
    pattern = _mac_patterns()
    assert pattern.search(b"x" + MAC_B.upper().replace(":", "-").encode())
    hits = []
    scanned = {"files": 0, "bodies": 0, "transport": 0, "log": 0}
    for run in (*coupon_run["runs"], coupon_run["control"]):
        data_dir = run["gw"].data_dir
        for path in sorted(p for p in data_dir.rglob("*") if p.is_file()):
            scanned["files"] += 1
            if pattern.search(path.read_bytes()):
                hits.append(str(path))
        for body in run["bodies"]:
            scanned["bodies"] += 1
            if pattern.search(body):
                hits.append(body[:80])
        for rec in run["gw"].transport.records:
            scanned["transport"] += 1
            if pattern.search(json.dumps(rec).encode()):
                hits.append(rec)
    for line in coupon_run["log"]:
        scanned["log"] += 1
        if pattern.search(line.encode()):
            hits.append(line)
    # the sweep must actually be looking at something
    assert all(scanned.values()), scanned
    assert hits == []
    dt = elapsed(t0)
    assert dt < 5.0, dt


# 8 ---------------------------------------------------------------------------

@criterion(8, "stationary device on the fence boundary for 300 s: <= 2 Enter+Exit events, < 10 s")
def test_c8_no_flap():
    t0 = time.perf_counter()
    world = CouponWorld(Path("."))
    fence = world.fence  # default thresholds
    assert (fence.enter_threshold, fence.exit_threshold, fence.confirm_count) == (0.7, 0.4, 2)
    # distance where the noise-free closeness sits mid-band
    ref = fence.reference.means["cafe-t1"]
    target_rssi = ref + fence.scale_db * np.log(0.55)
    dist = 10 ** ((world.tracker_ap.rssi0 - target_rssi) / (10 * world.model.exponent))
    device = DevicePath(MAC_A, ((dist, 0.0, 0.0),), 3.0)
    events = run_scenario([world.tracker_ap], [device], world.model, 300.0, world.seed)
    assert len(events) == 100
    tracker = Tracker(SALT)  # default 60 s window
    state = ProximityState("d", fence.id)
    values, edges = [], []
    for ev in events:
        _, track = tracker.ingest(ev)
        c = closeness(fence, window_aggregate(track, ev.t_ms))
        values.append(c)
        state, out = step(state, c, ev.t_ms, fence)
        edges += [e.kind.value for e in out if e.kind.value != "Dwell"]
    in_band = sum(fence.exit_threshold < v < fence.enter_threshold for v in values)
    assert in_band >= 90, in_band  # the device really sits in the hysteresis band
    assert len(edges) <= 2, edges
    dt = elapsed(t0)
    assert dt < 10.0, dt


# 10 --------------------------------------------------------------------------

@criterion(10, "dispatch accepts a 4096-byte payload and rejects 4097, < 1 ms")
def test_c10_payload_boundary():
    device = "f" * 32
    subs = SubscriptionStore([Topic("t", "T", (), ("r",))])
    subs.subscribe("t", device, "tok")
    transport = MockTransport()
    d = Dispatcher(transport, subs, sleep=lambda s: None)
    ok = PushMessage("t", device, "r", "m1", "tok", b"x" * 4096)
    big = PushMessage("t", device, "r", "m2", "tok", b"x" * 4097)
    t0 = time.perf_counter()
    report = d.dispatch([ok, big], 0)
    dt = elapsed(t0)
    assert [o for _, o in report.outcomes] == [Outcome.SENT, Outcome.PAYLOAD_TOO_LARGE]
    assert len(transport.records) == 1 and len(transport.records[0]["payload"]) == 4096
    assert dt < 1e-3, dt
