"""Cohort file format: JSON-lines, one patient object per line.

Each line holds {"patient_id", "stay_hours", "observations": [{"var",
"hour", "value"}, ...], "cxr_events": [{"hour", "embedding", "labels"},
...]} where embeddings are 512 floats and labels are 10 ints in {0, 1} or
null.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clinical import Observation
from .errors import DataError
from .trajectory import CxrEvent


@dataclass
class PatientRecord:
    patient_id: str
    stay_hours: int
    observations: list[Observation] = field(default_factory=list)
    events: list[CxrEvent] = field(default_factory=list)
    image_ids: list[str] = field(default_factory=list)


def write_cohort(path, records: list[PatientRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            line = {
                "patient_id": rec.patient_id,
                "stay_hours": rec.stay_hours,
                "observations": [
                    {"var": o.var, "hour": o.hour, "value": o.value}
                    for o in rec.observations
                ],
                "cxr_events": [
                    {
                        "hour": e.hour,
                        "embedding": [float(x) for x in e.embedding],
                        "labels": None if e.report_labels is None else [int(x) for x in e.report_labels],
                        **({"image_id": rec.image_ids[i]} if rec.image_ids else {}),
                    }
                    for i, e in enumerate(rec.events)
                ],
            }
            f.write(json.dumps(line) + "\n")


def read_cohort(path) -> list[PatientRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: invalid JSON") from exc
            events = []
            image_ids = []
            for e in obj["cxr_events"]:
                events.append(
                    CxrEvent(
                        hour=int(e["hour"]),
                        embedding=np.asarray(e["embedding"], dtype=np.float32),
                        report_labels=e.get("labels"),
                    )
                )
                if "image_id" in e:
                    image_ids.append(e["image_id"])
            records.append(
                PatientRecord(
                    patient_id=obj["patient_id"],
                    stay_hours=int(obj["stay_hours"]),
                    observations=[
                        Observation(
                            patient_id=obj["patient_id"],
                            var=o["var"],
                            hour=float(o["hour"]),
                            value=o["value"],
                        )
                        for o in obj["observations"]
                    ],
                    events=events,
                    image_ids=image_ids if len(image_ids) == len(events) else [],
                )
            )
    return records


def write_labeled_embeddings(path, embeddings: np.ndarray, labels: np.ndarray) -> None:
    """JSON-lines {"embedding": [512 floats], "labels": [10 ints]}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for emb, lab in zip(embeddings, labels):
            f.write(
                json.dumps(
                    {"embedding": [float(x) for x in emb], "labels": [int(x) for x in lab]}
                )
                + "\n"
            )


def read_labeled_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    embs, labs = [], []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            embs.append(obj["embedding"])
            labs.append(obj["labels"])
    if not embs:
        raise DataError(f"no labeled embeddings in {path}")
    return np.asarray(embs, dtype=np.float32), np.asarray(labs, dtype=np.int64)
