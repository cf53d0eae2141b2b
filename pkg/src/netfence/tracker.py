"""Passive probe-request ingestion.

Raw MAC addresses exist only inside :func:`ingest`; they are replaced by a
keyed hash (:func:`hash_mac`) before anything is stored, so downstream code
only ever sees 32-hex-character device ids.
"""

from __future__ import annotations

import bisect
import hashlib
import hmac
import math
import re
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple

from .errors import EmptyWindow, MalformedMac, RssiOutOfRange, StaleEvent, WeakSalt
from .fingerprint import OccurrenceFingerprint, SignalVector, build_occurrence_fingerprint, build_signal_vector

MIN_SALT_BYTES = 16
RSSI_MIN, RSSI_MAX = -120.0, 0.0
DEFAULT_WINDOW_SPAN_S = 60.0
REORDER_TOLERANCE_S = 2.0

_MAC_RE = re.compile(r"[0-9a-f]{2}(:[0-9a-f]{2}){5}")

DeviceId = str


def canonical_mac(mac: Any) -> str:
    if not isinstance(mac, str):
        raise MalformedMac("MAC address must be a string")
    canon = mac.strip().lower().replace("-", ":")
    if not _MAC_RE.fullmatch(canon):
        raise MalformedMac("MAC address is not six colon-separated hex octets")
    return canon


def hash_mac(mac: str, salt: bytes) -> DeviceId:
    """HMAC-SHA256 of the canonical MAC under ``salt``, truncated to 128 bits."""
    if len(salt) < MIN_SALT_BYTES:
        raise WeakSalt(f"salt must be at least {MIN_SALT_BYTES} bytes, got {len(salt)}")
    digest = hmac.new(salt, canonical_mac(mac).encode("ascii"), hashlib.sha256).hexdigest()
    return digest[:32]


@dataclass(frozen=True)
class ProbeEvent:
    tracker: str
    mac: str = field(repr=False)
    rssi: float
    t_ms: int

    def __post_init__(self) -> None:
        if not isinstance(self.tracker, str) or not self.tracker:
            raise ValueError("tracker id must be a non-empty string")
        object.__setattr__(self, "mac", canonical_mac(self.mac))
        if isinstance(self.rssi, bool) or not isinstance(self.rssi, (int, float)) or not math.isfinite(self.rssi):
            raise RssiOutOfRange("rssi must be a finite number")
        if not RSSI_MIN <= self.rssi <= RSSI_MAX:
            raise RssiOutOfRange(f"rssi {self.rssi} outside [{RSSI_MIN:g}, {RSSI_MAX:g}] dBm")
        if isinstance(self.t_ms, bool) or not isinstance(self.t_ms, int):
            raise ValueError("t must be an integer unix-millisecond timestamp")

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ProbeEvent":
        if not isinstance(obj, Mapping):
            raise ValueError("probe event must be a JSON object")
        missing = {"tracker", "mac", "rssi", "t"} - obj.keys()
        if missing:
            raise ValueError(f"probe event missing field(s): {', '.join(sorted(missing))}")
        return cls(obj["tracker"], obj["mac"], obj["rssi"], obj["t"])

    def to_json(self) -> dict:
        return {"tracker": self.tracker, "mac": self.mac, "rssi": self.rssi, "t": self.t_ms}


class Sample(NamedTuple):
    """One hashed detection in a device window."""

    t_ms: int
    tracker: str
    rssi: float


@dataclass(frozen=True)
class DeviceTrack:
    device: DeviceId
    window: tuple[Sample, ...]
    window_span_s: float = DEFAULT_WINDOW_SPAN_S

    @property
    def newest_ms(self) -> int:
        return self.window[-1].t_ms


def _live(track: DeviceTrack, now_ms: int) -> list[Sample]:
    cutoff = now_ms - track.window_span_s * 1000
    live = [s for s in track.window if cutoff <= s.t_ms <= now_ms]
    if not live:
        raise EmptyWindow(f"no detections within {track.window_span_s:g} s of t={now_ms}")
    return live


def window_aggregate(track: DeviceTrack, now_ms: int) -> SignalVector:
    """Mean RSSI per tracker over the live part of the window."""
    return build_signal_vector((s.tracker, s.rssi) for s in _live(track, now_ms))


def window_fingerprint(track: DeviceTrack, now_ms: int, bucket_ms: int = 1000) -> OccurrenceFingerprint:
    """Occurrence fingerprint of the window, one recording per ``bucket_ms`` slot.

    A probe request heard by several trackers lands in the same slot, so each
    slot plays the role of one scan recording.
    """
    slots: dict[int, set[str]] = defaultdict(set)
    for s in _live(track, now_ms):
        slots[s.t_ms // bucket_ms].add(s.tracker)
    return build_occurrence_fingerprint(slots.values())


class Tracker:
    """Per-device sliding windows fed by probe events."""

    def __init__(
        self,
        salt: bytes,
        window_span_s: float = DEFAULT_WINDOW_SPAN_S,
        reorder_tolerance_s: float = REORDER_TOLERANCE_S,
    ):
        if len(salt) < MIN_SALT_BYTES:
            raise WeakSalt(f"salt must be at least {MIN_SALT_BYTES} bytes, got {len(salt)}")
        if window_span_s <= 0:
            raise ValueError("window_span_s must be positive")
        self._salt = bytes(salt)
        self.window_span_s = window_span_s
        self.reorder_tolerance_s = reorder_tolerance_s
        self._windows: dict[DeviceId, list[Sample]] = {}
        self._lock = threading.Lock()

    def device_id(self, mac: str) -> DeviceId:
        return hash_mac(mac, self._salt)

    def ingest(self, event: ProbeEvent) -> tuple[DeviceId, DeviceTrack]:
        device = hash_mac(event.mac, self._salt)
        sample = Sample(event.t_ms, event.tracker, float(event.rssi))
        with self._lock:
            window = self._windows.setdefault(device, [])
            if window:
                newest = window[-1].t_ms
                if event.t_ms < newest - self.reorder_tolerance_s * 1000:
                    raise StaleEvent(
                        f"event {newest - event.t_ms} ms older than the newest detection for this device"
                    )
            bisect.insort_right(window, sample, key=lambda s: s.t_ms)
            cutoff = window[-1].t_ms - self.window_span_s * 1000
            drop = bisect.bisect_left(window, cutoff, key=lambda s: s.t_ms)
            del window[:drop]
            track = DeviceTrack(device, tuple(window), self.window_span_s)
        return device, track

    def track(self, device: DeviceId) -> DeviceTrack | None:
        with self._lock:
            window = self._windows.get(device)
            return DeviceTrack(device, tuple(window), self.window_span_s) if window else None
