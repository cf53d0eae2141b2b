"""Network fences: Enter/Exit/Dwell detection from fingerprint closeness.

A fence is one reference fingerprint plus a metric. Each observation of a
device is reduced to a closeness in [0, 1] against that reference, and a small
per-(device, fence) state machine with separate enter/exit thresholds turns the
closeness stream into events.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .errors import MetricMismatch, NonMonotoneTime
from .fingerprint import (
    Fingerprint,
    OccurrenceFingerprint,
    SignalVector,
    euclidean_distance,
    fingerprint_from_json,
    minmax_similarity,
    rank_transform,
    restrict,
    spearman_correlation,
    tanimoto_distance,
)

METRICS = ("minmax", "euclidean", "tanimoto", "spearman")
DEFAULT_SCALE_DB = 30.0


@dataclass(frozen=True)
class NetworkFence:
    id: str
    reference: Fingerprint
    metric: str = "euclidean"
    enter_threshold: float = 0.7
    exit_threshold: float = 0.4
    confirm_count: int = 2
    min_dwell_s: float = 30.0
    scale_db: float = DEFAULT_SCALE_DB

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        want = OccurrenceFingerprint if self.metric == "minmax" else SignalVector
        if not isinstance(self.reference, want):
            raise MetricMismatch(f"metric {self.metric} needs a {want.__name__} reference")
        ref_keys = self.reference.fractions if self.metric == "minmax" else self.reference.means
        if not ref_keys:
            raise ValueError(f"fence {self.id!r} has an empty reference fingerprint")
        if not 0.0 <= self.exit_threshold < self.enter_threshold <= 1.0:
            raise ValueError("need 0 <= exit_threshold < enter_threshold <= 1")
        if self.confirm_count < 1:
            raise ValueError("confirm_count must be positive")
        if self.min_dwell_s < 0 or self.scale_db <= 0:
            raise ValueError("min_dwell_s must be >= 0 and scale_db > 0")

    @property
    def observation_type(self) -> type:
        return OccurrenceFingerprint if self.metric == "minmax" else SignalVector

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "NetworkFence":
        kwargs = {}
        for src, dst in (("enter", "enter_threshold"), ("exit", "exit_threshold"),
                         ("confirm", "confirm_count"), ("dwell_s", "min_dwell_s"), ("scale_db", "scale_db")):
            if src in obj:
                kwargs[dst] = obj[src]
        return cls(
            id=str(obj["id"]),
            metric=obj.get("metric", "euclidean"),
            reference=fingerprint_from_json(obj["reference"]),
            **kwargs,
        )

    def to_json(self) -> dict:
        return {
            "id": self.id, "metric": self.metric, "reference": self.reference.to_json(),
            "enter": self.enter_threshold, "exit": self.exit_threshold,
            "confirm": self.confirm_count, "dwell_s": self.min_dwell_s, "scale_db": self.scale_db,
        }


class Phase(str, Enum):
    OUTSIDE = "Outside"
    CANDIDATE = "Candidate"
    INSIDE = "Inside"


@dataclass(frozen=True)
class ProximityState:
    device: str
    fence: str
    phase: Phase = Phase.OUTSIDE
    count: int = 0  # consecutive qualifying observations while Candidate
    since_ms: Optional[int] = None  # Enter time while Inside
    dwell_emitted: bool = False
    last_closeness: float = 0.0
    last_t_ms: Optional[int] = None

    def to_json(self) -> dict:
        return {
            "device": self.device, "fence": self.fence, "phase": self.phase.value,
            "count": self.count, "since_ms": self.since_ms, "dwell_emitted": self.dwell_emitted,
            "last_closeness": self.last_closeness, "last_t_ms": self.last_t_ms,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ProximityState":
        return cls(**{**obj, "phase": Phase(obj["phase"])})


class EventKind(str, Enum):
    ENTER = "Enter"
    EXIT = "Exit"
    DWELL = "Dwell"


@dataclass(frozen=True)
class FenceEvent:
    kind: EventKind
    device: str
    fence: str
    t_ms: int
    closeness: float

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "device": self.device, "fence": self.fence,
                "t_unix_ms": self.t_ms, "closeness": self.closeness}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "FenceEvent":
        return cls(EventKind(obj["kind"]), obj["device"], obj["fence"], int(obj["t_unix_ms"]),
                   float(obj["closeness"]))


def closeness(fence: NetworkFence, observation: Fingerprint) -> float:
    """Map the fence metric onto [0, 1], where 1 means "at the reference"."""
    if not isinstance(observation, fence.observation_type):
        raise MetricMismatch(
            f"fence {fence.id!r} uses {fence.metric}, got a {type(observation).__name__}"
        )
    ref = fence.reference
    if fence.metric == "minmax":
        value = minmax_similarity(observation, ref) / minmax_similarity(ref, ref)
    elif fence.metric == "tanimoto":
        value = 1.0 - tanimoto_distance(observation, ref)
    elif fence.metric == "euclidean":
        value = math.exp(-euclidean_distance(observation, ref) / fence.scale_db)
    else:
        common = observation.means.keys() & ref.means.keys()
        if len(common) < 2:
            return 0.0
        rho = spearman_correlation(
            rank_transform(restrict(observation, common)), rank_transform(restrict(ref, common))
        )
        value = (rho + 1.0) / 2.0
    return min(1.0, max(0.0, value))


def step(
    state: ProximityState, value: float, t_ms: int, fence: NetworkFence
) -> tuple[ProximityState, list[FenceEvent]]:
    """Advance one (device, fence) state machine by one closeness sample."""
    if state.last_t_ms is not None and t_ms < state.last_t_ms:
        raise NonMonotoneTime(f"t={t_ms} precedes previous sample at {state.last_t_ms}")
    events: list[FenceEvent] = []
    state = replace(state, last_closeness=value, last_t_ms=t_ms)

    def emit(kind: EventKind) -> None:
        events.append(FenceEvent(kind, state.device, state.fence, t_ms, value))

    if state.phase is Phase.INSIDE:
        if value <= fence.exit_threshold:
            emit(EventKind.EXIT)
            state = replace(state, phase=Phase.OUTSIDE, count=0, since_ms=None, dwell_emitted=False)
        elif not state.dwell_emitted and t_ms - state.since_ms >= fence.min_dwell_s * 1000:
            emit(EventKind.DWELL)
            state = replace(state, dwell_emitted=True)
        return state, events

    if value < fence.enter_threshold:
        return replace(state, phase=Phase.OUTSIDE, count=0), events
    count = state.count + 1
    if count >= fence.confirm_count:
        emit(EventKind.ENTER)
        return replace(state, phase=Phase.INSIDE, count=0, since_ms=t_ms, dwell_emitted=False), events
    return replace(state, phase=Phase.CANDIDATE, count=count), events


Observation = Union[Fingerprint, Sequence[Fingerprint]]


class FenceEngine:
    """Registry of fences plus the per-(device, fence) proximity states."""

    def __init__(self, fences: Iterable[NetworkFence] = ()):
        self._lock = threading.RLock()
        self._fences: dict[str, NetworkFence] = {}
        self._states: dict[tuple[str, str], ProximityState] = {}
        self.replace_fences(fences)

    @property
    def fences(self) -> Mapping[str, NetworkFence]:
        return self._fences

    def replace_fences(self, fences: Iterable[NetworkFence]) -> None:
        """Atomically swap the fence set; states of removed fences are dropped."""
        new = {}
        for f in fences:
            if f.id in new:
                raise ValueError(f"duplicate fence id {f.id!r}")
            new[f.id] = f
        with self._lock:
            self._fences = new
            self._states = {k: s for k, s in self._states.items() if k[1] in new}

    def state(self, device: str, fence_id: str) -> ProximityState:
        return self._states.get((device, fence_id)) or ProximityState(device, fence_id)

    def observe(self, device: str, observation: Observation, t_ms: int) -> list[FenceEvent]:
        """Run one observation through every fence, returning events in fence-id order.

        ``observation`` may be a single fingerprint or several of different
        kinds; each fence uses the first one matching its metric and is skipped
        if none does.
        """
        obs = [observation] if isinstance(observation, (SignalVector, OccurrenceFingerprint)) else list(observation)
        events: list[FenceEvent] = []
        with self._lock:
            fences = self._fences
            for fid in sorted(fences):
                fence = fences[fid]
                match = next((o for o in obs if isinstance(o, fence.observation_type)), None)
                if match is None:
                    continue
                events.extend(self._advance(device, fence, closeness(fence, match), t_ms))
        return events

    def _advance(self, device: str, fence: NetworkFence, value: float, t_ms: int) -> list[FenceEvent]:
        new, events = step(self.state(device, fence.id), value, t_ms, fence)
        self._states[(device, fence.id)] = new
        return events

    def sweep(self, now_ms: int, staleness_s: float) -> list[FenceEvent]:
        """Feed closeness 0 to every non-Outside state not observed for ``staleness_s``."""
        cutoff = now_ms - staleness_s * 1000
        events: list[FenceEvent] = []
        with self._lock:
            stale = sorted(
                k for k, s in self._states.items()
                if s.phase is not Phase.OUTSIDE and s.last_t_ms is not None and s.last_t_ms < cutoff
            )
            for device, fid in stale:
                events.extend(self._advance(device, self._fences[fid], 0.0, now_ms))
        return events

    def latest_t_ms(self) -> int:
        with self._lock:
            return max((s.last_t_ms or 0 for s in self._states.values()), default=0)

    def inside(self, fence_id: str) -> list[str]:
        with self._lock:
            return sorted(d for (d, f), s in self._states.items() if f == fence_id and s.phase is Phase.INSIDE)

    def snapshot(self) -> list[dict]:
        with self._lock:
            return [s.to_json() for _, s in sorted(self._states.items())]

    def restore(self, states: Iterable[Mapping[str, Any]]) -> None:
        with self._lock:
            for obj in states:
                s = ProximityState.from_json(obj)
                if s.fence in self._fences:
                    self._states[(s.device, s.fence)] = s
