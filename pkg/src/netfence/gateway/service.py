"""The end-to-end pipeline: probe event -> window -> fences + rules -> push."""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Optional

from ..dispatch import (
    DedupStore,
    DeliveryReport,
    Dispatcher,
    MockTransport,
    PushTransport,
    SubscriptionStore,
    VisitHistoryStore,
    match,
)
from ..fence import FenceEngine, FenceEvent
from ..rules import EvaluationContext, VisibleAp, evaluate_all
from ..storage import EventLog, Journal, write_json_atomic
from ..tracker import ProbeEvent, Tracker, window_aggregate, window_fingerprint
from .config import Config, Resources, load_resources

log = logging.getLogger(__name__)


@dataclass
class ProcessResult:
    device: str
    fence_events: list[FenceEvent] = field(default_factory=list)
    report: Optional[DeliveryReport] = None


class Gateway:
    """Owns every piece of server state and runs events through it.

    One lock serialises event processing, which keeps per-device ordering and
    makes a reload (atomic swap of fences, rules and topics) safe to run at any
    time. All clocks are event time: ``now`` is the newest detection seen.
    """

    def __init__(
        self,
        config: Config,
        transport: Optional[PushTransport] = None,
        salt: Optional[bytes] = None,
        sleep: Optional[Callable[[float], None]] = None,
    ):
        self.config = config
        self._lock = threading.RLock()
        self.resources: Resources = load_resources(config)
        salt = salt if salt is not None else config.load_salt()
        self.tz = config.tz
        data = Path(config.data_dir)
        data.mkdir(parents=True, exist_ok=True)
        self.data_dir = data

        self.tracker = Tracker(salt, window_span_s=config.window_span_s)
        self.engine = FenceEngine(self.resources.fences)
        self.subscriptions = SubscriptionStore(self.resources.topics, Journal(data, "subscriptions", fsync=True))
        self.history = VisitHistoryStore(Journal(data, "history", fsync=True))
        self.dedup = DedupStore(Journal(data, "dedup", fsync=True))
        self.transport = transport if transport is not None else MockTransport(log_path=data / "transport.jsonl")
        kwargs = {"sleep": sleep} if sleep is not None else {}
        self.dispatcher = Dispatcher(
            self.transport, self.subscriptions, self.history, self.dedup,
            dedup_window_h=config.dedup_window_h, **kwargs,
        )
        self.event_log = EventLog(data / "events.jsonl", max_bytes=config.event_log_max_bytes)
        self._reports: list[dict] = [r for r in self.event_log.read_all() if r.get("kind") == "Delivery"]
        self._fence_state_path = data / "fence_state.json"
        self._restore_fence_state()
        self._watermark = self.engine.latest_t_ms()
        self._last_sweep = self._watermark

    # -- processing ------------------------------------------------------

    def process(self, event: ProbeEvent) -> ProcessResult:
        with self._lock:
            device, track = self.tracker.ingest(event)
            now = track.newest_ms
            self._watermark = max(self._watermark, now)
            res = self.resources
            signal = window_aggregate(track, now)
            occurrence = window_fingerprint(track, now)
            fence_events = self.engine.observe(device, [signal, occurrence], now)
            ctx = EvaluationContext(
                visible=[VisibleAp(res.trackers.get(t, t), t, m) for t, m in sorted(signal.means.items())],
                clock=datetime.fromtimestamp(now / 1000, timezone.utc).astimezone(self.tz).time(),
                device=device,
                history=self.history,
                t_ms=now,
            )
            fired = evaluate_all(res.rules, ctx)
            messages = match(device, fired, fence_events, self.subscriptions, res.content, res.rules_by_id)
            report = self.dispatcher.dispatch(messages, now) if messages else None
            self._record(fence_events, report)
            self._maybe_sweep()
            return ProcessResult(device, fence_events, report)

    def process_many(self, events: Iterable[ProbeEvent]) -> list[ProcessResult]:
        return [self.process(e) for e in events]

    def _record(self, fence_events: list[FenceEvent], report: Optional[DeliveryReport]) -> None:
        for ev in fence_events:
            self.event_log.append(ev.to_json())
        if report is not None:
            entry = {"kind": "Delivery", **report.to_json()}
            self.event_log.append(entry)
            self._reports.append(entry)

    def _maybe_sweep(self) -> None:
        interval_ms = self.config.staleness_sweep_s * 1000
        if self._watermark - self._last_sweep >= interval_ms:
            self.sweep(self._watermark)

    def sweep(self, now_ms: int) -> list[FenceEvent]:
        """Close out fences for devices silent longer than the staleness interval."""
        with self._lock:
            self._last_sweep = now_ms
            events = self.engine.sweep(now_ms, self.config.staleness_sweep_s)
            self._record(events, None)
            return events

    # -- admin / queries -------------------------------------------------

    def reload(self) -> Resources:
        """Re-read fences, rules, topics; on any error the old set stays live."""
        new = load_resources(self.config)
        with self._lock:
            self.resources = new
            self.engine.replace_fences(new.fences)
            self.subscriptions.replace_topics(new.topics)
        return new

    def inside(self, fence_id: str) -> list[str]:
        return self.engine.inside(fence_id)

    def deliveries(self, since_ms: int = 0) -> list[dict]:
        with self._lock:
            return [r for r in self._reports if r["t_unix_ms"] >= since_ms]

    # -- persistence -----------------------------------------------------

    def _restore_fence_state(self) -> None:
        if self._fence_state_path.exists():
            self.engine.restore(json.loads(self._fence_state_path.read_text(encoding="utf-8")))

    def close(self) -> None:
        """Snapshot every store and compact the change logs."""
        with self._lock:
            write_json_atomic(self._fence_state_path, self.engine.snapshot())
            self.subscriptions.compact()
            self.history.compact()
            self.dedup.compact(self._watermark, self.dispatcher.dedup_window_ms)
