"""Per-patient embedding tracks and fused model inputs.

From a patient's chest-image events (hour + 512-dim embedding) this module
builds, over the inclusive window [first event hour, last event hour]:

  * the target track: exact embeddings at event hours, elementwise linear
    interpolation in between (computed at 64-bit, stored at 32-bit);
  * the previous track: at hour t, the embedding of the latest event
    strictly before t (the window-start hour takes the first event);
  * the fused inputs: per-hour concatenation [clinical features; previous
    embedding], 82 + 512 = 594 wide.

Hours outside the window appear in no track.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, DataError
from .io import load_blob, save_blob

EMBEDDING_DIM = 512
N_FEATURES = 82
FUSED_DIM = N_FEATURES + EMBEDDING_DIM


@dataclass
class CxrEvent:
    hour: int
    embedding: np.ndarray
    report_labels: np.ndarray | None = None

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=np.float32)
        if self.embedding.shape != (EMBEDDING_DIM,):
            raise DataError(
                f"event embedding must have length {EMBEDDING_DIM}, got shape {self.embedding.shape}"
            )
        if self.report_labels is not None:
            self.report_labels = np.asarray(self.report_labels, dtype=np.int64)


@dataclass
class EmbeddingTrack:
    window: tuple[int, int]
    target: np.ndarray
    previous: np.ndarray
    anchor_hours: list[int] = field(default_factory=list)

    @property
    def n_hours(self) -> int:
        return self.window[1] - self.window[0] + 1

    def index_of(self, hour: int) -> int:
        t0, t1 = self.window
        if not t0 <= hour <= t1:
            raise DataError(f"hour {hour} outside window [{t0}, {t1}]")
        return hour - t0


def _check_events(events: list[CxrEvent]) -> None:
    if len(events) < 2:
        raise DataError("patient needs more than one chest-image event")
    hours = [e.hour for e in events]
    for a, b in zip(hours, hours[1:]):
        if a == b:
            raise DataError(f"duplicate event hour {a}")
        if a > b:
            raise DataError("event hours must be strictly increasing")


def interpolate_targets(events: list[CxrEvent]) -> EmbeddingTrack:
    """Linear interpolation between consecutive events; exact at anchors."""
    _check_events(events)
    t0, t1 = events[0].hour, events[-1].hour
    n = t1 - t0 + 1
    target = np.empty((n, EMBEDDING_DIM), dtype=np.float32)
    for left, right in zip(events, events[1:]):
        a = left.embedding.astype(np.float64)
        b = right.embedding.astype(np.float64)
        span = right.hour - left.hour
        slope = (b - a) / span
        for h in range(left.hour + 1, right.hour):
            target[h - t0] = (slope * (h - left.hour) + a).astype(np.float32)
    for e in events:
        target[e.hour - t0] = e.embedding
    previous = fill_previous(events, (t0, t1))
    return EmbeddingTrack(
        window=(t0, t1),
        target=target,
        previous=previous,
        anchor_hours=[e.hour for e in events],
    )


def fill_previous(events: list[CxrEvent], window: tuple[int, int]) -> np.ndarray:
    """Forward-fill the latest event strictly before each hour.

    At the window start there is no strictly-earlier event, so the first
    event's embedding is used.
    """
    _check_events(events)
    t0, t1 = window
    n = t1 - t0 + 1
    previous = np.empty((n, EMBEDDING_DIM), dtype=np.float32)
    current = events[0].embedding
    idx = 0
    for h in range(t0, t1 + 1):
        while idx < len(events) and events[idx].hour < h:
            current = events[idx].embedding
            idx += 1
        previous[h - t0] = current
    return previous


def fuse(features: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Concatenate clinical features and previous-image embeddings per hour."""
    if features.ndim != 2 or previous.ndim != 2 or features.shape[0] != previous.shape[0]:
        raise AlignmentError(
            f"feature hours {features.shape} do not align with track hours {previous.shape}"
        )
    return np.concatenate(
        [features.astype(np.float32), previous.astype(np.float32)], axis=1
    )


@dataclass
class PatientTensors:
    """Everything training and evaluation need for one patient."""

    patient_id: str
    window: tuple[int, int]
    features: np.ndarray  # (T, 82)
    target: np.ndarray  # (T, 512)
    previous: np.ndarray  # (T, 512)
    anchor_hours: list[int]
    anchor_labels: list[list[int] | None]

    @property
    def n_hours(self) -> int:
        return self.window[1] - self.window[0] + 1

    def fused(self) -> np.ndarray:
        return fuse(self.features, self.previous)


def build_patient_tensors(
    patient_id: str,
    feature_matrix: np.ndarray,
    events: list[CxrEvent],
) -> PatientTensors:
    """Window the feature matrix to the event span and build all tracks."""
    track = interpolate_targets(events)
    t0, t1 = track.window
    if feature_matrix.shape[0] <= t1:
        raise AlignmentError(
            f"feature matrix covers hours [0, {feature_matrix.shape[0] - 1}] "
            f"but events span [{t0}, {t1}]"
        )
    return PatientTensors(
        patient_id=patient_id,
        window=track.window,
        features=feature_matrix[t0 : t1 + 1].astype(np.float32),
        target=track.target,
        previous=track.previous,
        anchor_hours=track.anchor_hours,
        anchor_labels=[
            e.report_labels.tolist() if e.report_labels is not None else None
            for e in events
        ],
    )


def save_patient_tensors(tensors: PatientTensors, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    bin_path = out_dir / f"{tensors.patient_id}.bin"
    sidecar = out_dir / f"{tensors.patient_id}.json"
    save_blob(
        bin_path,
        sidecar,
        {
            "features": tensors.features,
            "target": tensors.target,
            "previous": tensors.previous,
        },
        {
            "patient_id": tensors.patient_id,
            "window": list(tensors.window),
            "anchor_hours": list(tensors.anchor_hours),
            "anchor_labels": tensors.anchor_labels,
        },
    )
    return bin_path, sidecar


def load_patient_tensors(out_dir, patient_id: str) -> PatientTensors:
    out_dir = Path(out_dir)
    arrays, manifest = load_blob(
        out_dir / f"{patient_id}.bin", out_dir / f"{patient_id}.json"
    )
    return PatientTensors(
        patient_id=manifest["patient_id"],
        window=tuple(manifest["window"]),
        features=arrays["features"],
        target=arrays["target"],
        previous=arrays["previous"],
        anchor_hours=list(manifest["anchor_hours"]),
        anchor_labels=[
            list(l) if l is not None else None for l in manifest["anchor_labels"]
        ],
    )


def list_patient_ids(tensors_dir) -> list[str]:
    return sorted(p.stem for p in Path(tensors_dir).glob("*.json"))
