"""Wi-Fi fingerprints and the four ways of comparing them.

Two fingerprint flavours exist:

* :class:`OccurrenceFingerprint` records, per access point, the share of scan
  recordings in which it was seen. It is compared with :func:`minmax_similarity`.
* :class:`SignalVector` records the mean RSSI per access point. It is compared
  with :func:`euclidean_distance`, :func:`tanimoto_distance`, or by ranks via
  :func:`rank_transform` and :func:`spearman_correlation`.

Access point identifiers are plain strings (``ApId``); two ids are the same AP
iff the strings are equal.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Union

from .errors import ApSetMismatch, EmptyInput, TooFew

ApId = str

#: RSSI substituted for an AP that one vector of a pair did not measure.
FILL_DBM = -100.0


def _frozen(mapping: Mapping[str, Any]) -> Mapping[str, Any]:
    return MappingProxyType(dict(mapping))


@dataclass(frozen=True, eq=True)
class OccurrenceFingerprint:
    fractions: Mapping[ApId, float]
    recording_count: int

    def __post_init__(self) -> None:
        if self.recording_count < 1:
            raise ValueError("recording_count must be positive")
        for ap, frac in self.fractions.items():
            if not ap:
                raise ValueError("empty AP identifier")
            if not 0.0 < frac <= 1.0:
                raise ValueError(f"fraction for {ap!r} outside (0, 1]: {frac}")
        object.__setattr__(self, "fractions", _frozen(self.fractions))

    __hash__ = None  # type: ignore[assignment]

    def to_json(self) -> dict:
        return {"kind": "occurrence", "entries": dict(self.fractions), "count": self.recording_count}


@dataclass(frozen=True, eq=True)
class SignalVector:
    means: Mapping[ApId, float]
    sample_counts: Mapping[ApId, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for ap, mean in self.means.items():
            if not ap:
                raise ValueError("empty AP identifier")
            if not math.isfinite(mean):
                raise ValueError(f"non-finite mean RSSI for {ap!r}")
        counts = dict(self.sample_counts) or {ap: 1 for ap in self.means}
        if set(counts) != set(self.means):
            raise ValueError("sample_counts must cover exactly the APs in means")
        if any(n < 1 for n in counts.values()):
            raise ValueError("sample counts must be positive")
        object.__setattr__(self, "means", _frozen(self.means))
        object.__setattr__(self, "sample_counts", _frozen(counts))

    __hash__ = None  # type: ignore[assignment]

    def __len__(self) -> int:
        return len(self.means)

    def to_json(self) -> dict:
        return {
            "kind": "signal",
            "entries": dict(self.means),
            "count": sum(self.sample_counts.values()),
            "samples": dict(self.sample_counts),
        }


@dataclass(frozen=True, eq=True)
class RankVector:
    ranks: Mapping[ApId, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ranks", _frozen(self.ranks))

    __hash__ = None  # type: ignore[assignment]


Fingerprint = Union[OccurrenceFingerprint, SignalVector]


def build_occurrence_fingerprint(recordings: Iterable[Iterable[ApId]]) -> OccurrenceFingerprint:
    """Fraction of recordings in which each AP appears.

    An AP listed several times in one recording still counts once for it.
    """
    recordings = [frozenset(r) for r in recordings]
    if not recordings:
        raise EmptyInput("no recordings")
    seen: dict[ApId, int] = defaultdict(int)
    for rec in recordings:
        for ap in rec:
            seen[ap] += 1
    n = len(recordings)
    return OccurrenceFingerprint({ap: c / n for ap, c in seen.items()}, n)


def build_signal_vector(scans: Iterable[tuple[ApId, float]]) -> SignalVector:
    """Average a flat list of ``(ap, rssi_dbm)`` observations per AP."""
    totals: dict[ApId, float] = defaultdict(float)
    counts: dict[ApId, int] = defaultdict(int)
    for ap, rssi in scans:
        totals[ap] += rssi
        counts[ap] += 1
    if not counts:
        raise EmptyInput("no scans")
    return SignalVector({ap: totals[ap] / counts[ap] for ap in counts}, dict(counts))


def minmax_similarity(f1: OccurrenceFingerprint, f2: OccurrenceFingerprint) -> float:
    """Sum over the AP union of ``(f1 + f2) * min/max``.

    Identical fingerprints score ``2 * sum(f)``; disjoint ones score 0.
    """
    a, b = f1.fractions, f2.fractions
    total = 0.0
    for ap in a.keys() & b.keys():
        x, y = a[ap], b[ap]
        total += (x + y) * (min(x, y) / max(x, y))
    # APs present on only one side contribute (f + 0) * 0 = 0.
    return total


def _filled_pair(va: SignalVector, vb: SignalVector) -> tuple[list[float], list[float]]:
    keys = sorted(va.means.keys() | vb.means.keys())
    if not keys:
        raise EmptyInput("both signal vectors are empty")
    a = [va.means.get(k, FILL_DBM) for k in keys]
    b = [vb.means.get(k, FILL_DBM) for k in keys]
    return a, b


def euclidean_distance(va: SignalVector, vb: SignalVector) -> float:
    a, b = _filled_pair(va, vb)
    return math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(a, b)))


def tanimoto_distance(va: SignalVector, vb: SignalVector) -> float:
    """One minus the Tanimoto coefficient of the filled vectors.

    All components are negative dBm, so the dot product is positive and the
    result lies in [0, 1].
    """
    a, b = _filled_pair(va, vb)
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.fsum(x * x for x in a)
    nb = math.fsum(y * y for y in b)
    return 1.0 - dot / (na + nb - dot)


def rank_transform(va: SignalVector) -> RankVector:
    """Rank APs by signal, strongest first; ties share their average rank."""
    if not va.means:
        raise EmptyInput("cannot rank an empty signal vector")
    order = sorted(va.means.items(), key=lambda kv: (-kv[1], kv[0]))
    ranks: dict[ApId, float] = {}
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and order[j + 1][1] == order[i][1]:
            j += 1
        # positions i..j (0-based) hold ranks i+1..j+1
        avg = (i + j + 2) / 2.0
        for k in range(i, j + 1):
            ranks[order[k][0]] = avg
        i = j + 1
    return RankVector(ranks)


def spearman_correlation(ra: RankVector, rb: RankVector) -> float:
    """Pearson correlation of the two rank vectors (valid with ties)."""
    if ra.ranks.keys() != rb.ranks.keys():
        raise ApSetMismatch("rank vectors cover different AP sets")
    n = len(ra.ranks)
    if n < 2:
        raise TooFew(f"need at least 2 APs, got {n}")
    keys = sorted(ra.ranks)
    x = [ra.ranks[k] for k in keys]
    y = [rb.ranks[k] for k in keys]
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxy = math.fsum(p * q for p, q in zip(dx, dy))
    sxx = math.fsum(p * p for p in dx)
    syy = math.fsum(q * q for q in dy)
    if sxx == 0.0 or syy == 0.0:
        # a fully tied side has no order; only an identical ranking agrees with it
        return 1.0 if x == y else 0.0
    rho = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, rho))


def restrict(va: SignalVector, keys: Iterable[ApId]) -> SignalVector:
    keys = set(keys)
    return SignalVector(
        {k: v for k, v in va.means.items() if k in keys},
        {k: v for k, v in va.sample_counts.items() if k in keys},
    )


def fingerprint_from_json(obj: Mapping[str, Any]) -> Fingerprint:
    """Inverse of ``to_json`` for both fingerprint kinds."""
    try:
        kind = obj["kind"]
        entries = obj["entries"]
        count = int(obj["count"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"not a fingerprint object: {exc}") from None
    if not isinstance(entries, Mapping):
        raise ValueError("fingerprint 'entries' must be an object")
    entries = {str(k): float(v) for k, v in entries.items()}
    if kind == "occurrence":
        return OccurrenceFingerprint(entries, count)
    if kind == "signal":
        samples = obj.get("samples") or {}
        return SignalVector(entries, {str(k): int(v) for k, v in samples.items()})
    raise ValueError(f"unknown fingerprint kind {kind!r}")


def dumps(fp: Fingerprint) -> str:
    return json.dumps(fp.to_json(), sort_keys=True)


def loads(text: str) -> Fingerprint:
    return fingerprint_from_json(json.loads(text))
