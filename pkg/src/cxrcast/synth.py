"""Seeded synthetic ICU cohort with known latent dynamics.

Each patient carries AR(1) clinical variable paths (hourly, in normalized
deviation units, mapped into native units and clipped to physiological
bounds), a linear-Gaussian latent state driven by a subset of those
variables, and a 512-dim embedding that is a linear readout of the
latent. Chest-image events arrive with geometric inter-arrival times and
carry the true embedding of their hour plus labels from a thresholded
linear readout. The feature-to-latent coupling scale is the experimental
lever: zeroing it makes clinical features carry no information about the
embedding trajectory (negative control).

Thresholds are calibrated on a pilot simulation so label prevalences land
near the configured target. Hourly latent paths and the readout matrices
are persisted separately for diagnostics; the pipeline never reads them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clinical import CATEGORICAL, NUMERIC, FeatureSchema, Observation
from .cohort import PatientRecord, write_cohort, write_labeled_embeddings
from .errors import DataError
from .io import save_blob
from .rng import substream
from .trajectory import EMBEDDING_DIM, CxrEvent

N_LABEL_CLASSES = 10


@dataclass
class GeneratorConfig:
    n_patients: int = 1000
    stay_hours_min: int = 48
    stay_hours_max: int = 240
    mean_cxr_interval_hours: float = 24.0
    first_cxr_max_hour: int = 6
    latent_dim: int = 8
    n_coupled_features: int = 10
    feature_coupling_scale: float = 0.6
    latent_decay: float = 0.95
    latent_noise_scale: float = 0.05
    embedding_scale: float = 0.5
    embedding_noise_scale: float = 0.02
    ar_coefficient: float = 0.9
    ar_noise_scale: float = 0.3
    ar_overrides: dict = field(default_factory=dict)
    obs_noise_scale: float = 0.02
    missingness_rate: float = 0.25
    lab_interval_hours: int = 6
    n_vital_variables: int = 11
    target_prevalence: float = 0.35
    prevalence_band: tuple[float, float] = (0.15, 0.60)
    pilot_patients: int = 50
    max_retries: int = 20
    seed: int = 0

    def validate(self) -> None:
        if self.n_patients < 1:
            raise DataError("n_patients must be >= 1")
        if not 1 <= self.stay_hours_min <= self.stay_hours_max:
            raise DataError("stay hour bounds must satisfy 1 <= min <= max")
        if self.mean_cxr_interval_hours < 1.0:
            raise DataError("mean_cxr_interval_hours must be >= 1")
        for name in ("missingness_rate", "target_prevalence"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise DataError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.latent_decay < 1.0:
            raise DataError("latent_decay must lie in [0, 1)")
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise DataError("ar_coefficient must lie in [0, 1)")


@dataclass
class _Structure:
    """Cohort-level matrices shared by pilot and patient simulation."""

    transition: np.ndarray  # latent_dim x latent_dim
    drive: np.ndarray  # latent_dim x n_coupled
    readout_embed: np.ndarray  # 512 x latent_dim
    readout_label: np.ndarray  # 10 x 512
    coupled_vars: list[str]
    thresholds: np.ndarray | None = None


def _build_structure(config: GeneratorConfig, schema: FeatureSchema) -> _Structure:
    rng = substream(config.seed, "synth-structure")
    d = config.latent_dim
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    transition = config.latent_decay * q
    numeric_vars = [s.name for s in schema.specs if s.kind == NUMERIC]
    k = min(config.n_coupled_features, len(numeric_vars))
    coupled = numeric_vars[:k]
    drive = rng.normal(size=(d, k)) * (config.feature_coupling_scale / np.sqrt(k))
    readout_embed = rng.normal(size=(EMBEDDING_DIM, d)) * (
        config.embedding_scale / np.sqrt(d)
    )
    raw = rng.normal(size=(N_LABEL_CLASSES, EMBEDDING_DIM))
    readout_label = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return _Structure(
        transition=transition,
        drive=drive,
        readout_embed=readout_embed,
        readout_label=readout_label,
        coupled_vars=coupled,
    )


def _ar_paths(config: GeneratorConfig, schema: FeatureSchema, hours: int, rng) -> dict[str, np.ndarray]:
    """Per-variable deviation paths (0 = healthy midpoint, +-1 = healthy bounds)."""
    from scipy.signal import lfilter

    paths = {}
    for s in schema.specs:
        if s.kind != NUMERIC:
            continue
        rho = float(config.ar_overrides.get(s.name, {}).get("coefficient", config.ar_coefficient))
        sig = float(config.ar_overrides.get(s.name, {}).get("noise_scale", config.ar_noise_scale))
        stationary = sig / np.sqrt(1.0 - rho * rho) if sig > 0 else 0.0
        dev0 = rng.normal(0.0, stationary) if stationary else 0.0
        if hours == 1:
            paths[s.name] = np.array([dev0])
            continue
        noise = rng.normal(0.0, sig, size=hours - 1)
        tail, _ = lfilter([1.0], [1.0, -rho], noise, zi=np.array([rho * dev0]))
        paths[s.name] = np.concatenate([[dev0], tail])
    return paths


def _latent_and_embedding_paths(
    config: GeneratorConfig, structure: _Structure, dev_paths: dict[str, np.ndarray], hours: int, rng
) -> tuple[np.ndarray, np.ndarray]:
    d = config.latent_dim
    u = np.stack([dev_paths[v] for v in structure.coupled_vars], axis=1)  # (H, k)
    z = np.zeros((hours, d))
    w = rng.normal(0.0, config.latent_noise_scale, size=(hours, d))
    z[0] = w[0]
    for t in range(1, hours):
        z[t] = structure.transition @ z[t - 1] + structure.drive @ u[t - 1] + w[t]
    v_noise = rng.normal(0.0, config.embedding_noise_scale, size=(hours, EMBEDDING_DIM))
    e = z @ structure.readout_embed.T + v_noise
    return z, e


def _event_hours(config: GeneratorConfig, stay: int, rng) -> list[int]:
    p = 1.0 / config.mean_cxr_interval_hours
    hours = []
    h = int(rng.integers(0, config.first_cxr_max_hour + 1))
    while h <= stay - 1:
        hours.append(h)
        h += int(rng.geometric(p))
    return hours


def _simulate_patient(
    config: GeneratorConfig,
    schema: FeatureSchema,
    structure: _Structure,
    index: int,
) -> tuple[PatientRecord, np.ndarray]:
    pid = f"synth-{index:05d}"
    for attempt in range(config.max_retries):
        rng = substream(config.seed, "synth-patient", index, attempt)
        stay = int(rng.integers(config.stay_hours_min, config.stay_hours_max + 1))
        event_hours = _event_hours(config, stay, rng)
        if len(event_hours) < 2:
            continue

        dev_paths = _ar_paths(config, schema, stay, rng)
        z, e = _latent_and_embedding_paths(config, structure, dev_paths, stay, rng)

        observations = []
        numeric_specs = [s for s in schema.specs if s.kind == NUMERIC]
        vital_names = {s.name for s in numeric_specs[: config.n_vital_variables]}
        static_names = {"age_years", "weight_kg", "height_cm"}
        for s in numeric_specs:
            dev = dev_paths[s.name]
            if s.name in static_names:
                hours_observed = np.array([0])
            else:
                rate = 1.0 - config.missingness_rate
                if s.name not in vital_names:
                    rate /= config.lab_interval_hours
                hours_observed = np.nonzero(rng.random(stay) < rate)[0]
            if hours_observed.size == 0:
                continue
            noisy = dev[hours_observed] + rng.normal(0.0, config.obs_noise_scale, size=hours_observed.size)
            half = (s.healthy_hi - s.healthy_lo) / 2.0
            mid = s.healthy_lo + half
            native = np.clip(mid + noisy * half, s.phys_lo, s.phys_hi)
            stamps = hours_observed + rng.random(hours_observed.size)
            for h, stamp, value in zip(hours_observed, stamps, native):
                observations.append(
                    Observation(patient_id=pid, var=s.name, hour=float(stamp), value=float(value))
                )
        for s in schema.specs:
            if s.kind == CATEGORICAL:
                choice = s.categories[int(rng.integers(0, len(s.categories)))]
                observations.append(
                    Observation(patient_id=pid, var=s.name, hour=0.0, value=choice)
                )

        events = []
        image_ids = []
        for h in event_hours:
            embedding = e[h].astype(np.float32)
            logits = structure.readout_label @ embedding
            labels = (logits >= structure.thresholds).astype(np.int64)
            events.append(CxrEvent(hour=h, embedding=embedding, report_labels=labels))
            image_ids.append(f"{pid}-img{h:04d}")

        record = PatientRecord(
            patient_id=pid,
            stay_hours=stay,
            observations=observations,
            events=events,
            image_ids=image_ids,
        )
        return record, z.astype(np.float32)
    raise DataError(
        f"could not draw >= 2 image events for patient {index} in {config.max_retries} attempts"
    )


def _calibrate_thresholds(config: GeneratorConfig, schema: FeatureSchema, structure: _Structure) -> np.ndarray:
    """Pilot simulation; thresholds hit the target prevalence by quantile."""
    logits = []
    for i in range(config.pilot_patients):
        rng = substream(config.seed, "synth-pilot", i)
        stay = int(rng.integers(config.stay_hours_min, config.stay_hours_max + 1))
        dev_paths = _ar_paths(config, schema, stay, rng)
        _, e = _latent_and_embedding_paths(config, structure, dev_paths, stay, rng)
        sampled = e[:: max(1, stay // 16)]
        logits.append(sampled @ structure.readout_label.T)
    pooled = np.concatenate(logits, axis=0)
    return np.quantile(pooled, 1.0 - config.target_prevalence, axis=0)


@dataclass
class CohortStats:
    n_patients: int
    n_events: int
    n_observations: int
    label_prevalence: list[float]
    mean_interval_hours: float

    def to_dict(self) -> dict:
        return {
            "n_patients": self.n_patients,
            "n_events": self.n_events,
            "n_observations": self.n_observations,
            "label_prevalence": self.label_prevalence,
            "mean_interval_hours": self.mean_interval_hours,
        }


def generate_cohort(
    config: GeneratorConfig,
    schema: FeatureSchema,
    cohort_path,
    labeled_path=None,
    latents_path=None,
) -> CohortStats:
    """Write the cohort JSON-lines file (and companions); returns stats."""
    config.validate()
    structure = _build_structure(config, schema)
    structure.thresholds = _calibrate_thresholds(config, schema, structure)

    records = []
    latents = {}
    for i in range(config.n_patients):
        record, z = _simulate_patient(config, schema, structure, i)
        records.append(record)
        latents[record.patient_id] = z
    write_cohort(cohort_path, records)

    all_events = [e for r in records for e in r.events]
    if labeled_path is not None:
        write_labeled_embeddings(
            labeled_path,
            np.stack([e.embedding for e in all_events]),
            np.stack([e.report_labels for e in all_events]),
        )
    if latents_path is not None:
        latents_path = Path(latents_path)
        arrays = {f"latent:{pid}": z for pid, z in latents.items()}
        arrays["embedding_map"] = structure.readout_embed.astype(np.float32)
        arrays["label_readout"] = structure.readout_label.astype(np.float32)
        arrays["label_thresholds"] = structure.thresholds.astype(np.float32)
        save_blob(
            latents_path,
            latents_path.with_suffix(".json"),
            arrays,
            {"kind": "synthetic_ground_truth", "seed": config.seed},
        )

    labels = np.stack([e.report_labels for e in all_events])
    intervals = []
    for r in records:
        hours = [e.hour for e in r.events]
        intervals.extend(np.diff(hours).tolist())
    return CohortStats(
        n_patients=len(records),
        n_events=len(all_events),
        n_observations=sum(len(r.observations) for r in records),
        label_prevalence=labels.mean(axis=0).tolist(),
        mean_interval_hours=float(np.mean(intervals)),
    )


class EmbeddingLookup:
    """Stand-in for a vision encoder: image id -> stored 512-dim embedding."""

    def __init__(self, records: list[PatientRecord]):
        self._table = {}
        for r in records:
            if not r.image_ids:
                continue
            for image_id, event in zip(r.image_ids, r.events):
                self._table[image_id] = event.embedding

    def encode(self, image_id: str) -> np.ndarray:
        try:
            return self._table[image_id]
        except KeyError:
            raise DataError(f"unknown image id: {image_id!r}") from None
