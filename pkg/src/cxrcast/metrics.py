"""Exact ranking metrics and the two-system evaluation protocol.

AUROC uses the Mann-Whitney convention (half credit for score ties),
computed from integer pair counts so it agrees exactly with brute-force
pair counting. AUPRC is the step-wise average precision with tied scores
grouped at one threshold. Undefined metrics (single-class strata) are
reported as None, never 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .trajectory import PatientTensors

HORIZON_CURRENT = "current"
HORIZON_CURRENT_ANCHOR = "current_anchor"

REPORT_COLUMNS = ["class", "horizon", "system", "auroc", "auprc", "accuracy", "prevalence", "n"]
CURVE_COLUMNS = ["class", "lead_hours", "system", "auroc", "auprc", "n"]


@dataclass
class ScoredSample:
    score: float
    label: int
    class_id: int
    lead_hours: int
    patient_id: str
    hour: int


def auroc(scores, labels) -> float | None:
    """P(score+ > score-) + 0.5 * P(tie); None when one class is absent."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    y = labels[order]
    u2 = 0  # twice the U statistic, kept integral so ties stay exact
    neg_below = 0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        grp_pos = int(y[i:j].sum())
        grp_neg = (j - i) - grp_pos
        u2 += grp_pos * (2 * neg_below + grp_neg)
        neg_below += grp_neg
        i = j
    return u2 / (2 * n_pos * n_neg)


def auprc(scores, labels) -> float | None:
    """Average precision over descending unique thresholds; ties grouped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    ap = 0.0
    tp = 0
    fp = 0
    prev_tp = 0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        grp_pos = int(y[i:j].sum())
        tp += grp_pos
        fp += (j - i) - grp_pos
        if tp > prev_tp:
            ap += ((tp - prev_tp) / n_pos) * (tp / (tp + fp))
        prev_tp = tp
        i = j
    return ap


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.size == 0:
        raise DataError("accuracy of an empty sample set is undefined")
    return float(np.mean((scores >= threshold).astype(np.int64) == labels))


def prevalence(labels) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    return float(labels.mean()) if labels.size else float("nan")


def extract_horizon_samples(
    patient: PatientTensors,
    model_probs: np.ndarray,
    baseline_probs: np.ndarray,
    lead_times,
) -> tuple[dict[str, list[ScoredSample]], int]:
    """Lead-time samples against the report labels of each later image.

    For every image event after the patient's first, and every lead L, a
    sample is read at hour h - L when that hour lies inside the inclusion
    window. Events without report labels are skipped; the skip count is
    returned alongside the samples.
    """
    t0, _ = patient.window
    out: dict[str, list[ScoredSample]] = {"model": [], "baseline": []}
    skipped = 0
    for anchor_idx in range(1, len(patient.anchor_hours)):
        h = patient.anchor_hours[anchor_idx]
        labels = patient.anchor_labels[anchor_idx]
        if labels is None:
            skipped += 1
            continue
        for lead in lead_times:
            t = h - int(lead)
            if t < t0:
                continue
            idx = t - t0
            for c in range(len(labels)):
                common = dict(
                    label=int(labels[c]),
                    class_id=c,
                    lead_hours=int(lead),
                    patient_id=patient.patient_id,
                    hour=t,
                )
                out["model"].append(ScoredSample(score=float(model_probs[idx, c]), **common))
                out["baseline"].append(ScoredSample(score=float(baseline_probs[idx, c]), **common))
    return out, skipped


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    curve_rows: list[dict] = field(default_factory=list)
    skipped_unlabeled_events: int = 0

    def add(self, class_name, horizon, system, scores, labels, threshold):
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        self.rows.append(
            {
                "class": class_name,
                "horizon": horizon,
                "system": system,
                "auroc": auroc(scores, labels) if scores.size else None,
                "auprc": auprc(scores, labels) if scores.size else None,
                "accuracy": accuracy(scores, labels, threshold) if scores.size else None,
                "prevalence": prevalence(labels) if scores.size else None,
                "n": int(scores.size),
            }
        )

    def macro_auroc(self, horizon: str, system: str) -> float:
        vals = [
            r["auroc"]
            for r in self.rows
            if r["horizon"] == horizon and r["system"] == system and r["auroc"] is not None
        ]
        if not vals:
            raise DataError(f"no defined AUROC cells for horizon={horizon} system={system}")
        return float(np.mean(vals))

    def cell(self, class_name: str, horizon: str, system: str) -> dict:
        for r in self.rows:
            if r["class"] == class_name and r["horizon"] == horizon and r["system"] == system:
                return r
        raise KeyError((class_name, horizon, system))

    def to_csv(self, path) -> None:
        _write_csv(path, REPORT_COLUMNS, self.rows)

    def curves_to_csv(self, path) -> None:
        _write_csv(path, CURVE_COLUMNS, self.curve_rows)

    @staticmethod
    def rows_from_csv(path) -> list[dict]:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            rows = []
            for raw in reader:
                row = dict(raw)
                for key in ("auroc", "auprc", "accuracy", "prevalence"):
                    row[key] = float(row[key]) if row[key] != "" else None
                for key in ("n",):
                    row[key] = int(row[key])
                if "lead_hours" in row:
                    row["lead_hours"] = int(row["lead_hours"])
                rows.append(row)
            return rows


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in columns])


@dataclass
class EvalConfig:
    lead_times: tuple[int, ...] = (12, 24)
    max_lead_hours: int = 48
    accuracy_threshold: float = 0.5


def evaluate(
    patients: list[PatientTensors],
    model,
    classifier,
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Score model and previous-image baseline on every horizon.

    Current prediction compares per-hour scores against soft labels of the
    interpolated target track thresholded at 0.5 (window-start hour
    excluded, matching the loss convention); anchor-hour report labels are
    reported as the stricter `current_anchor` horizon (lead 0). Fixed
    leads and the 1..max_lead_hours curve compare scores read L hours
    before each later image against that image's report labels.
    """
    if not patients:
        raise DataError("evaluation requires at least one patient")
    class_names = classifier.classes
    n_classes = len(class_names)

    cur_scores = {"model": [[] for _ in range(n_classes)], "baseline": [[] for _ in range(n_classes)]}
    cur_labels = [[] for _ in range(n_classes)]
    all_leads = sorted(set(range(1, config.max_lead_hours + 1)) | set(config.lead_times) | {0})
    lead_scores = {
        sys: {lead: [[] for _ in range(n_classes)] for lead in all_leads}
        for sys in ("model", "baseline")
    }
    lead_labels = {lead: [[] for _ in range(n_classes)] for lead in all_leads}
    skipped = 0

    for patient in patients:
        fused = patient.fused()
        predicted = model.generate(fused, prime=patient.target[0])
        model_probs = classifier.predict_probs(predicted)
        base_probs = classifier.predict_probs(patient.previous)
        target_probs = classifier.predict_probs(patient.target)
        truth = (target_probs >= 0.5).astype(np.int64)

        for c in range(n_classes):
            cur_scores["model"][c].extend(model_probs[1:, c])
            cur_scores["baseline"][c].extend(base_probs[1:, c])
            cur_labels[c].extend(truth[1:, c])

        samples, n_skip = extract_horizon_samples(patient, model_probs, base_probs, all_leads)
        skipped += n_skip
        for sample in samples["model"]:
            lead_scores["model"][sample.lead_hours][sample.class_id].append(sample.score)
            lead_labels[sample.lead_hours][sample.class_id].append(sample.label)
        for sample in samples["baseline"]:
            lead_scores["baseline"][sample.lead_hours][sample.class_id].append(sample.score)

    report = EvalReport(skipped_unlabeled_events=skipped)
    thr = config.accuracy_threshold
    for c, name in enumerate(class_names):
        for system in ("model", "baseline"):
            report.add(name, HORIZON_CURRENT, system, cur_scores[system][c], cur_labels[c], thr)
    for c, name in enumerate(class_names):
        for system in ("model", "baseline"):
            report.add(
                name, HORIZON_CURRENT_ANCHOR, system,
                lead_scores[system][0][c], lead_labels[0][c], thr,
            )
    for lead in config.lead_times:
        for c, name in enumerate(class_names):
            for system in ("model", "baseline"):
                report.add(
                    name, f"{lead}h", system,
                    lead_scores[system][lead][c], lead_labels[lead][c], thr,
                )
    for lead in all_leads:
        if lead == 0:
            continue
        for c, name in enumerate(class_names):
            for system in ("model", "baseline"):
                scores = np.asarray(lead_scores[system][lead][c], dtype=np.float64)
                labels = np.asarray(lead_labels[lead][c], dtype=np.int64)
                report.curve_rows.append(
                    {
                        "class": name,
                        "lead_hours": lead,
                        "system": system,
                        "auroc": auroc(scores, labels) if scores.size else None,
                        "auprc": auprc(scores, labels) if scores.size else None,
                        "n": int(scores.size),
                    }
                )
    return report
