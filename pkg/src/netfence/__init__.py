"""Network-proximity geofencing: Wi-Fi fingerprints, proximity rules, fences and push."""

from .errors import NetfenceError
from .fingerprint import (
    FILL_DBM,
    OccurrenceFingerprint,
    RankVector,
    SignalVector,
    build_occurrence_fingerprint,
    build_signal_vector,
    euclidean_distance,
    minmax_similarity,
    rank_transform,
    spearman_correlation,
    tanimoto_distance,
)

__version__ = "0.1.0"

__all__ = [
    "FILL_DBM", "NetfenceError", "OccurrenceFingerprint", "RankVector", "SignalVector",
    "build_occurrence_fingerprint", "build_signal_vector", "euclidean_distance",
    "minmax_similarity", "rank_transform", "spearman_correlation", "tanimoto_distance",
]
