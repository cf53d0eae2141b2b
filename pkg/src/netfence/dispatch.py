"""Topics, subscriptions, proximity-to-subscription matching and push dispatch.

Delivery goes through a :class:`PushTransport`; the only implementation shipped
here is :class:`MockTransport`, which records every send. A real push
platform client would implement the same ``send`` method.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Protocol, Sequence

from .errors import UnknownTopic
from .fence import EventKind, FenceEvent
from .rules import MAX_PAYLOAD_BYTES, ActionSpec, Rule
from .storage import Journal

log = logging.getLogger(__name__)

DEFAULT_DEDUP_WINDOW_H = 24.0
MAX_ATTEMPTS = 5
BACKOFF_BASE_S = 1.0
BACKOFF_FACTOR = 2.0


@dataclass(frozen=True)
class Topic:
    id: str
    business_name: str = ""
    fence_ids: tuple[str, ...] = ()
    rule_ids: tuple[str, ...] = ()
    # content pushed on a bare fence Enter; None means Enter alone pushes nothing
    enter_message: Optional[str] = None

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Topic":
        return cls(
            id=str(obj["id"]),
            business_name=str(obj.get("business_name", "")),
            fence_ids=tuple(obj.get("fence_ids", ())),
            rule_ids=tuple(obj.get("rule_ids", ())),
            enter_message=obj.get("enter_message"),
        )


@dataclass(frozen=True)
class Subscription:
    topic_id: str
    device: str
    registration_token: str
    defunct: bool = False

    def to_json(self) -> dict:
        return {"topic_id": self.topic_id, "device": self.device,
                "token": self.registration_token, "defunct": self.defunct}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Subscription":
        return cls(obj["topic_id"], obj["device"], obj["token"], bool(obj.get("defunct", False)))


class SubscriptionStore:
    """Topic registry and ``(topic, device) -> token`` table.

    With a :class:`Journal` every write is logged before it becomes visible,
    so a restart replays to the same table.
    """

    def __init__(self, topics: Iterable[Topic] = (), journal: Optional[Journal] = None):
        self._lock = threading.RLock()
        self._topics: dict[str, Topic] = {}
        self._subs: dict[tuple[str, str], Subscription] = {}
        self.journal = journal
        self.replace_topics(topics)
        if journal is not None:
            self._replay(journal)

    def _replay(self, journal: Journal) -> None:
        snapshot, records = journal.load()
        for obj in snapshot or ():
            s = Subscription.from_json(obj)
            self._subs[(s.topic_id, s.device)] = s
        for rec in records:
            key = (rec["topic_id"], rec["device"])
            if rec["op"] == "put":
                self._subs[key] = Subscription(rec["topic_id"], rec["device"], rec["token"])
            elif rec["op"] == "del":
                self._subs.pop(key, None)
            elif rec["op"] == "defunct" and key in self._subs:
                self._subs[key] = _defunct(self._subs[key])

    @property
    def topics(self) -> Mapping[str, Topic]:
        return self._topics

    def replace_topics(self, topics: Iterable[Topic]) -> None:
        new = {}
        for t in topics:
            if t.id in new:
                raise ValueError(f"duplicate topic id {t.id!r}")
            new[t.id] = t
        with self._lock:
            self._topics = new

    def _log(self, record: dict) -> None:
        if self.journal is not None:
            self.journal.append(record)

    def subscribe(self, topic_id: str, device: str, token: str) -> tuple[Subscription, bool]:
        """Insert or replace; returns the row and whether it was newly created."""
        if not token:
            raise ValueError("registration token must be non-empty")
        with self._lock:
            if topic_id not in self._topics:
                raise UnknownTopic(f"unknown topic {topic_id!r}")
            key = (topic_id, device)
            created = key not in self._subs
            self._log({"op": "put", "topic_id": topic_id, "device": device, "token": token})
            sub = self._subs[key] = Subscription(topic_id, device, token)
        return sub, created

    def unsubscribe(self, topic_id: str, device: str) -> bool:
        with self._lock:
            if (topic_id, device) not in self._subs:
                return False
            self._log({"op": "del", "topic_id": topic_id, "device": device})
            del self._subs[(topic_id, device)]
            return True

    def mark_defunct(self, topic_id: str, device: str) -> None:
        with self._lock:
            sub = self._subs.get((topic_id, device))
            if sub is None or sub.defunct:
                return
            self._log({"op": "defunct", "topic_id": topic_id, "device": device})
            self._subs[(topic_id, device)] = _defunct(sub)

    def get(self, topic_id: str, device: str) -> Optional[Subscription]:
        return self._subs.get((topic_id, device))

    def for_device(self, device: str) -> list[Subscription]:
        with self._lock:
            return sorted((s for (_, d), s in self._subs.items() if d == device), key=lambda s: s.topic_id)

    def all(self) -> list[Subscription]:
        with self._lock:
            return [s for _, s in sorted(self._subs.items())]

    def compact(self) -> None:
        if self.journal is not None:
            with self._lock:
                self.journal.compact([s.to_json() for s in self.all()])


def _defunct(sub: Subscription) -> Subscription:
    return Subscription(sub.topic_id, sub.device, sub.registration_token, defunct=True)


class VisitHistoryStore:
    """Firing times per (device, rule); the read side backs FIRST_VISIT."""

    def __init__(self, journal: Optional[Journal] = None):
        self._lock = threading.Lock()
        self._fired: dict[tuple[str, str], list[int]] = defaultdict(list)
        self.journal = journal
        if journal is not None:
            snapshot, records = journal.load()
            for rec in list(snapshot or ()) + records:
                self._fired[(rec["device"], rec["rule"])].append(int(rec["t"]))

    def has_fired(self, device: str, rule_id: str, since_ms: Optional[int] = None) -> bool:
        times = self._fired.get((device, rule_id))
        if not times:
            return False
        return since_ms is None or max(times) >= since_ms

    def record(self, device: str, rule_id: str, t_ms: int) -> None:
        with self._lock:
            if self.journal is not None:
                self.journal.append({"device": device, "rule": rule_id, "t": t_ms})
            self._fired[(device, rule_id)].append(t_ms)

    def compact(self) -> None:
        if self.journal is not None:
            with self._lock:
                self.journal.compact(
                    [{"device": d, "rule": r, "t": t} for (d, r), ts in sorted(self._fired.items()) for t in ts]
                )


@dataclass(frozen=True)
class PushMessage:
    topic_id: str
    device: str
    rule_id: str
    content_id: str
    registration_token: str
    payload: bytes
    first_visit: bool = False

    @property
    def dedup_key(self) -> tuple[str, str, str]:
        return (self.device, self.rule_id, self.content_id)


class DeliveryStatus(str, Enum):
    ACCEPTED = "Accepted"
    INVALID_TOKEN = "InvalidToken"
    TRANSIENT_FAILURE = "TransientFailure"


class PushTransport(Protocol):
    def send(self, token: str, payload: bytes, t_ms: int) -> DeliveryStatus:
        """Deliver ``payload`` to the app instance behind ``token``.

        Must be safe to call again after a ``TRANSIENT_FAILURE``.
        """


class MockTransport:
    """In-memory transport recording ``(token, payload, t)`` for every send.

    ``invalid_tokens`` always answer InvalidToken; ``transient[token] = n``
    makes the first ``n`` sends to that token fail transiently. With
    ``log_path`` each record is also appended there as a JSON line.
    """

    def __init__(
        self,
        invalid_tokens: Iterable[str] = (),
        transient: Optional[Mapping[str, int]] = None,
        log_path: Optional[Path] = None,
    ):
        self.invalid_tokens = set(invalid_tokens)
        self.transient = dict(transient or {})
        self.log_path = Path(log_path) if log_path else None
        self.records: list[dict] = []
        self._lock = threading.Lock()

    def send(self, token: str, payload: bytes, t_ms: int) -> DeliveryStatus:
        with self._lock:
            if token in self.invalid_tokens:
                status = DeliveryStatus.INVALID_TOKEN
            elif self.transient.get(token, 0) > 0:
                self.transient[token] -= 1
                status = DeliveryStatus.TRANSIENT_FAILURE
            else:
                status = DeliveryStatus.ACCEPTED
            rec = {"token": token, "payload": payload.decode("utf-8", "replace"),
                   "t_unix_ms": t_ms, "status": status.value}
            self.records.append(rec)
            if self.log_path is not None:
                with open(self.log_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return status

    @property
    def accepted(self) -> list[dict]:
        return [r for r in self.records if r["status"] == DeliveryStatus.ACCEPTED.value]

    def dump_jsonl(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


class Outcome(str, Enum):
    SENT = "Sent"
    DEDUPLICATED = "Deduplicated"
    DEFUNCT = "Defunct"
    FAILED = "Failed"
    PAYLOAD_TOO_LARGE = "PayloadTooLarge"


_COUNT_KEY = {
    Outcome.SENT: "sent",
    Outcome.DEDUPLICATED: "deduplicated",
    Outcome.DEFUNCT: "defunct",
    Outcome.FAILED: "failed",
    Outcome.PAYLOAD_TOO_LARGE: "failed",
}


@dataclass
class DeliveryReport:
    t_ms: int
    outcomes: list[tuple[PushMessage, Outcome]] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        out = {"sent": 0, "deduplicated": 0, "defunct": 0, "failed": 0}
        for _, outcome in self.outcomes:
            out[_COUNT_KEY[outcome]] += 1
        return out

    def to_json(self) -> dict:
        """Counts plus per-message detail; never includes payloads or tokens."""
        return {
            **self.counts(),
            "t_unix_ms": self.t_ms,
            "messages": [
                {"topic": m.topic_id, "rule": m.rule_id, "content": m.content_id, "outcome": o.value}
                for m, o in self.outcomes
            ],
        }


def match(
    device: str,
    fired: Sequence[tuple[str, ActionSpec]],
    fence_events: Sequence[FenceEvent],
    store: SubscriptionStore,
    content: Mapping[str, str] = {},
    rules: Mapping[str, Rule] = {},
) -> list[PushMessage]:
    """Turn a device's fired rules and fence events into push messages.

    One message per (subscribed topic, fired rule of that topic) and per
    (subscribed topic, Enter on one of its fences) when the topic defines an
    ``enter_message``. Topics are visited in id order; defunct subscriptions
    are skipped.
    """
    messages = []
    for sub in store.for_device(device):
        if sub.defunct:
            continue
        topic = store.topics.get(sub.topic_id)
        if topic is None:
            continue
        for rule_id, action in fired:
            if rule_id not in topic.rule_ids:
                continue
            text = action.payload_template or content.get(action.message_id, "")
            rule = rules.get(rule_id)
            messages.append(PushMessage(
                topic.id, device, rule_id, action.message_id, sub.registration_token,
                text.encode("utf-8"), first_visit=bool(rule and rule.uses_first_visit),
            ))
        if topic.enter_message is None:
            continue
        for ev in fence_events:
            if ev.kind is EventKind.ENTER and ev.device == device and ev.fence in topic.fence_ids:
                messages.append(PushMessage(
                    topic.id, device, f"enter:{ev.fence}", topic.enter_message, sub.registration_token,
                    content.get(topic.enter_message, "").encode("utf-8"),
                ))
    return messages


class DedupStore:
    """Last Accepted time per dedup key."""

    def __init__(self, journal: Optional[Journal] = None):
        self._last: dict[tuple[str, str, str], int] = {}
        self.journal = journal
        if journal is not None:
            snapshot, records = journal.load()
            for rec in list(snapshot or ()) + records:
                key = tuple(rec["key"])
                self._last[key] = max(self._last.get(key, rec["t"]), rec["t"])

    def last_accepted(self, key: tuple[str, str, str]) -> Optional[int]:
        return self._last.get(key)

    def record(self, key: tuple[str, str, str], t_ms: int) -> None:
        if self.journal is not None:
            self.journal.append({"key": list(key), "t": t_ms})
        self._last[key] = t_ms

    def compact(self, now_ms: int, window_ms: int) -> None:
        self._last = {k: t for k, t in self._last.items() if t > now_ms - window_ms}
        if self.journal is not None:
            self.journal.compact([{"key": list(k), "t": t} for k, t in sorted(self._last.items())])


class Dispatcher:
    """Sends push messages at most once per dedup key within the dedup window."""

    def __init__(
        self,
        transport: PushTransport,
        subscriptions: SubscriptionStore,
        history: Optional[VisitHistoryStore] = None,
        dedup: Optional[DedupStore] = None,
        dedup_window_h: float = DEFAULT_DEDUP_WINDOW_H,
        max_attempts: int = MAX_ATTEMPTS,
        backoff_base_s: float = BACKOFF_BASE_S,
        backoff_factor: float = BACKOFF_FACTOR,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.transport = transport
        self.subscriptions = subscriptions
        self.history = history if history is not None else VisitHistoryStore()
        self.dedup = dedup if dedup is not None else DedupStore()
        self.dedup_window_ms = int(dedup_window_h * 3600 * 1000)
        self.max_attempts = max_attempts
        self.backoff_base_s = backoff_base_s
        self.backoff_factor = backoff_factor
        self.sleep = sleep
        self._guard = threading.Lock()
        self._key_locks: dict[tuple[str, str, str], threading.Lock] = defaultdict(threading.Lock)

    def _key_lock(self, key: tuple[str, str, str]) -> threading.Lock:
        with self._guard:
            return self._key_locks[key]

    def dispatch(
        self,
        messages: Iterable[PushMessage],
        now_ms: Optional[int] = None,
        transport: Optional[PushTransport] = None,
    ) -> DeliveryReport:
        now_ms = int(time.time() * 1000) if now_ms is None else now_ms
        transport = transport or self.transport
        report = DeliveryReport(now_ms)
        for msg in messages:
            report.outcomes.append((msg, self._deliver(msg, now_ms, transport)))
        return report

    def _deliver(self, msg: PushMessage, now_ms: int, transport: PushTransport) -> Outcome:
        if len(msg.payload) > MAX_PAYLOAD_BYTES:
            log.warning("payload for %s/%s is %d bytes, over the %d-byte limit",
                        msg.topic_id, msg.rule_id, len(msg.payload), MAX_PAYLOAD_BYTES)
            return Outcome.PAYLOAD_TOO_LARGE
        with self._key_lock(msg.dedup_key):
            last = self.dedup.last_accepted(msg.dedup_key)
            if last is not None and now_ms - last < self.dedup_window_ms:
                return Outcome.DEDUPLICATED
            sub = self.subscriptions.get(msg.topic_id, msg.device)
            if sub is not None and sub.defunct:
                return Outcome.DEFUNCT
            delay = self.backoff_base_s
            for attempt in range(1, self.max_attempts + 1):
                status = transport.send(msg.registration_token, msg.payload, now_ms)
                if status is DeliveryStatus.ACCEPTED:
                    self.dedup.record(msg.dedup_key, now_ms)
                    if msg.first_visit:
                        self.history.record(msg.device, msg.rule_id, now_ms)
                    return Outcome.SENT
                if status is DeliveryStatus.INVALID_TOKEN:
                    self.subscriptions.mark_defunct(msg.topic_id, msg.device)
                    return Outcome.DEFUNCT
                if attempt < self.max_attempts:
                    self.sleep(delay)
                    delay *= self.backoff_factor
            log.warning("giving up on %s/%s after %d attempts", msg.topic_id, msg.rule_id, self.max_attempts)
            return Outcome.FAILED
