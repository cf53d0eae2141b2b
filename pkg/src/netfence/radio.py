"""Deterministic radio-world simulator.

Log-distance path loss with Gaussian shadowing::

    rssi = rssi0 - 10 * n * log10(max(d, 0.1) / d0) + N(0, sigma^2)

Devices walk piecewise-linear paths and emit a probe request every
``probe_period_s``; each tracker-flagged AP that hears it above the detection
floor yields one :class:`~netfence.tracker.ProbeEvent`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import EmptyWindow
from .fingerprint import SignalVector, build_signal_vector
from .tracker import ProbeEvent, canonical_mac

MIN_DISTANCE_M = 0.1
DEFAULT_START_MS = 1_700_000_000_000
DEFAULT_PROBE_PERIOD_S = 3.0


@dataclass(frozen=True)
class ApNode:
    id: str
    ssid: str
    x: float
    y: float
    rssi0: float = -40.0
    acts_as_tracker: bool = True

    def __post_init__(self) -> None:
        if not -60.0 <= self.rssi0 <= -20.0:
            raise ValueError(f"AP {self.id}: rssi0 {self.rssi0} outside [-60, -20] dBm")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"AP {self.id}: position must be finite")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class PathLossModel:
    exponent: float = 2.5
    noise_sigma: float = 4.0
    detection_floor: float = -95.0
    d0: float = 1.0

    def __post_init__(self) -> None:
        if self.exponent <= 0 or self.noise_sigma < 0 or self.d0 <= 0:
            raise ValueError("need exponent > 0, noise_sigma >= 0, d0 > 0")
        if self.detection_floor < -120.0:
            raise ValueError("detection_floor below -120 dBm cannot be reported")

    def mean_rssi(self, rssi0: float, distance_m):
        """Noise-free RSSI; accepts scalars or arrays of distances."""
        d = np.maximum(distance_m, MIN_DISTANCE_M)
        return rssi0 - 10.0 * self.exponent * np.log10(d / self.d0)


@dataclass(frozen=True)
class DevicePath:
    mac: str = field(repr=False)
    waypoints: tuple[tuple[float, float, float], ...]
    probe_period_s: float = DEFAULT_PROBE_PERIOD_S

    def __post_init__(self) -> None:
        object.__setattr__(self, "mac", canonical_mac(self.mac))
        wps = tuple((float(x), float(y), float(t)) for x, y, t in self.waypoints)
        if not wps:
            raise ValueError("a device path needs at least one waypoint")
        if any(b[2] <= a[2] for a, b in zip(wps, wps[1:])):
            raise ValueError("waypoint times must be strictly increasing")
        if self.probe_period_s <= 0:
            raise ValueError("probe_period_s must be positive")
        object.__setattr__(self, "waypoints", wps)

    def probe_times(self, duration_s: float) -> np.ndarray:
        """Probe instants in seconds: every period from the first waypoint while on the path."""
        t0 = self.waypoints[0][2]
        t_end = self.waypoints[-1][2] if len(self.waypoints) > 1 else math.inf
        end = min(duration_s, t_end)
        if end < t0:
            return np.empty(0)
        n = int(math.floor((end - t0) / self.probe_period_s + 1e-9)) + 1
        times = t0 + np.arange(n) * self.probe_period_s
        return times[(times >= 0) & (times < duration_s) & (times <= t_end + 1e-9)]

    def positions(self, times: np.ndarray) -> np.ndarray:
        wp = np.asarray(self.waypoints)
        if len(wp) == 1:
            return np.repeat(wp[:, :2], len(times), axis=0)
        x = np.interp(times, wp[:, 2], wp[:, 0])
        y = np.interp(times, wp[:, 2], wp[:, 1])
        return np.column_stack([x, y])

    def noise_seed(self, seed: int) -> np.random.SeedSequence:
        # Keyed on the path, not the MAC: identical paths draw identical noise.
        blob = json.dumps([self.waypoints, self.probe_period_s]).encode()
        words = np.frombuffer(hashlib.sha256(blob).digest()[:16], dtype="<u4")
        return np.random.SeedSequence([seed, *words.tolist()])


def rssi_at(
    ap: ApNode,
    position: tuple[float, float],
    model: PathLossModel,
    rng: Optional[np.random.Generator] = None,
) -> Optional[float]:
    """One RSSI sample in dBm, or ``None`` when below the detection floor.

    ``rng=None`` (or ``noise_sigma == 0``) gives the noise-free value.
    """
    d = math.hypot(position[0] - ap.x, position[1] - ap.y)
    value = float(model.mean_rssi(ap.rssi0, d))
    if rng is not None and model.noise_sigma > 0:
        value += float(rng.normal(0.0, model.noise_sigma))
    value = min(value, 0.0)
    return None if value < model.detection_floor else value


def run_scenario(
    aps: Sequence[ApNode],
    devices: Sequence[DevicePath],
    model: PathLossModel,
    duration_s: float,
    seed: int,
    start_ms: int = DEFAULT_START_MS,
) -> list[ProbeEvent]:
    """Time-ordered probe events heard by the tracker APs.

    Ties in time are ordered by device position in ``devices``, then by AP
    position in ``aps``. RSSI is reported to 0.01 dB and never exceeds 0 dBm.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    trackers = [ap for ap in aps if ap.acts_as_tracker]
    if not trackers:
        return []
    tx = np.array([ap.position for ap in trackers], dtype=float)
    rssi0 = np.array([ap.rssi0 for ap in trackers], dtype=float)
    rows = []
    for di, dev in enumerate(devices):
        times = dev.probe_times(duration_s)
        if not len(times):
            continue
        pos = dev.positions(times)
        dist = np.hypot(pos[:, None, 0] - tx[None, :, 0], pos[:, None, 1] - tx[None, :, 1])
        rssi = model.mean_rssi(rssi0[None, :], dist)
        if model.noise_sigma > 0:
            rng = np.random.default_rng(dev.noise_seed(seed))
            rssi = rssi + rng.normal(0.0, model.noise_sigma, size=rssi.shape)
        rssi = np.minimum(np.round(rssi, 2), 0.0)
        t_ms = start_ms + np.round(times * 1000).astype(np.int64)
        for ti, ai in zip(*np.nonzero(rssi >= model.detection_floor)):
            rows.append((int(t_ms[ti]), di, int(ai), float(rssi[ti, ai])))
    rows.sort(key=lambda r: r[:3])
    return [ProbeEvent(trackers[ai].id, devices[di].mac, r, t) for t, di, ai, r in rows]


def record_reference(
    aps: Sequence[ApNode],
    position: tuple[float, float],
    model: PathLossModel,
    samples: int,
    seed: int,
    trackers_only: bool = True,
) -> SignalVector:
    """Average ``samples`` noisy scans taken at ``position`` into a reference vector."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    nodes = [ap for ap in aps if ap.acts_as_tracker or not trackers_only]
    scans = []
    for _ in range(samples):
        for ap in nodes:
            value = rssi_at(ap, position, model, rng)
            if value is not None:
                scans.append((ap.id, value))
    if not scans:
        raise EmptyWindow(f"no AP detectable from position {position}")
    return build_signal_vector(scans)


@dataclass(frozen=True)
class Scenario:
    aps: tuple[ApNode, ...]
    devices: tuple[DevicePath, ...]
    model: PathLossModel
    duration_s: float
    seed: int
    start_ms: int = DEFAULT_START_MS

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Scenario":
        m = obj.get("model", {})
        model = PathLossModel(
            exponent=float(m.get("n", 2.5)),
            noise_sigma=float(m.get("sigma_db", 4.0)),
            detection_floor=float(m.get("floor_dbm", -95.0)),
        )
        aps = tuple(
            ApNode(str(a["id"]), str(a.get("ssid", a["id"])), float(a["x"]), float(a["y"]),
                   float(a.get("rssi0", -40.0)), bool(a.get("tracker", True)))
            for a in obj.get("aps", [])
        )
        devices = tuple(
            DevicePath(d["mac"], tuple(tuple(w) for w in d["waypoints"]),
                       float(d.get("probe_period_s", DEFAULT_PROBE_PERIOD_S)))
            for d in obj.get("devices", [])
        )
        return cls(aps, devices, model, float(obj["duration_s"]), int(obj["seed"]),
                   int(obj.get("start_unix_ms", DEFAULT_START_MS)))

    def run(self) -> list[ProbeEvent]:
        return run_scenario(self.aps, self.devices, self.model, self.duration_s, self.seed, self.start_ms)


def events_to_jsonl(events: Iterable[ProbeEvent]) -> str:
    return "".join(json.dumps(e.to_json()) + "\n" for e in events)
