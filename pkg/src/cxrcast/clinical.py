"""Hourly clinical feature construction.

Raw, irregularly timestamped observations are validated against
physiological bounds, binned into hourly intervals, min-max normalized
against healthy reference ranges, forward-fill imputed (healthy-median
backstop before the first observation), and one-hot encoded into a dense
feature matrix with one row per hour.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, SchemaError, SpecError

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class VariableSpec:
    """Validation, normalization, and encoding rules for one variable."""

    name: str
    kind: str
    phys_lo: float | None = None
    phys_hi: float | None = None
    healthy_lo: float | None = None
    healthy_hi: float | None = None
    categories: tuple[str, ...] | None = None

    def validate(self) -> None:
        if self.kind == NUMERIC:
            for field in ("phys_lo", "phys_hi", "healthy_lo", "healthy_hi"):
                if getattr(self, field) is None:
                    raise SpecError(f"{self.name}: numeric variable missing {field}")
            if not self.phys_lo < self.phys_hi:
                raise SpecError(f"{self.name}: phys_lo must be < phys_hi")
            if self.healthy_lo == self.healthy_hi:
                raise SpecError(f"{self.name}: degenerate healthy range")
            if not (self.phys_lo <= self.healthy_lo < self.healthy_hi <= self.phys_hi):
                raise SpecError(
                    f"{self.name}: healthy range must lie inside physiological bounds"
                )
        elif self.kind == CATEGORICAL:
            if not self.categories:
                raise SpecError(f"{self.name}: categorical variable needs categories")
            if len(set(self.categories)) != len(self.categories):
                raise SpecError(f"{self.name}: duplicate categories")
        else:
            raise SpecError(f"{self.name}: unknown kind {self.kind!r}")

    @property
    def n_columns(self) -> int:
        return 1 if self.kind == NUMERIC else len(self.categories)


@dataclass(frozen=True)
class Observation:
    patient_id: str
    var: str
    hour: float
    value: float | str


@dataclass
class FeatureVector:
    """One hour of the processed feature matrix."""

    hour: int
    values: np.ndarray
    observed_mask: np.ndarray


class FeatureSchema:
    """Column layout induced by an ordered variable list."""

    def __init__(self, specs: Sequence[VariableSpec]):
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise SpecError("duplicate variable names in schema")
        for s in specs:
            s.validate()
        self.specs = list(specs)
        self.by_name = {s.name: s for s in specs}
        self.column_names: list[str] = []
        self.column_range: dict[str, tuple[int, int]] = {}
        col = 0
        for s in specs:
            start = col
            if s.kind == NUMERIC:
                self.column_names.append(s.name)
                col += 1
            else:
                for c in s.categories:
                    self.column_names.append(f"{s.name}={c}")
                col += len(s.categories)
            self.column_range[s.name] = (start, col)
        self.n_columns = col


def parse_variable_specs(entries: Iterable[dict]) -> list[VariableSpec]:
    specs = []
    for e in entries:
        kind = e.get("kind")
        if kind == CATEGORICAL:
            specs.append(
                VariableSpec(
                    name=e["name"], kind=kind, categories=tuple(e["categories"])
                )
            )
        else:
            specs.append(
                VariableSpec(
                    name=e["name"],
                    kind=kind,
                    phys_lo=e.get("phys_lo"),
                    phys_hi=e.get("phys_hi"),
                    healthy_lo=e.get("healthy_lo"),
                    healthy_hi=e.get("healthy_hi"),
                )
            )
    for s in specs:
        s.validate()
    return specs


def load_variable_specs(path=None) -> list[VariableSpec]:
    """Load a variable spec file; the bundled default expands to 82 columns."""
    if path is None:
        text = resources.files("cxrcast.data").joinpath("default_variables.json").read_text()
    else:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    return parse_variable_specs(json.loads(text))


def default_schema() -> FeatureSchema:
    return FeatureSchema(load_variable_specs())


def normalize_value(value: float, spec: VariableSpec) -> float:
    """Min-max normalize against the healthy range; deliberately unclamped."""
    return (value - spec.healthy_lo) / (spec.healthy_hi - spec.healthy_lo)


@dataclass
class BinnedPatient:
    """Hourly-binned raw values; NaN / None mark missing bins."""

    stay_hours: int
    numeric: dict[str, np.ndarray]
    categorical: dict[str, list]


def bin_hourly(
    observations: Iterable[Observation], schema: FeatureSchema, stay_hours: int
) -> BinnedPatient:
    """Collect observations into hourly bins.

    Numeric values outside physiological bounds are discarded and the
    survivors averaged (values sorted before summing, so the result does
    not depend on input order). Categorical bins take the last valid value
    in the hour, ties broken by category order.
    """
    if stay_hours < 1:
        raise DataError(f"stay_hours must be >= 1, got {stay_hours}")
    num_bins: dict[str, list[list[float]]] = {}
    cat_bins: dict[str, list[list[tuple[float, int]]]] = {}
    for s in schema.specs:
        if s.kind == NUMERIC:
            num_bins[s.name] = [[] for _ in range(stay_hours)]
        else:
            cat_bins[s.name] = [[] for _ in range(stay_hours)]

    for obs in observations:
        spec = schema.by_name.get(obs.var)
        if spec is None:
            raise SchemaError(f"unknown variable name: {obs.var!r}")
        if obs.hour < 0:
            raise DataError(f"{obs.var}: negative timestamp {obs.hour}")
        h = int(obs.hour)
        if h >= stay_hours:
            continue
        if spec.kind == NUMERIC:
            v = float(obs.value)
            if spec.phys_lo <= v <= spec.phys_hi:
                num_bins[obs.var][h].append(v)
        else:
            if obs.value in spec.categories:
                idx = spec.categories.index(obs.value)
                cat_bins[obs.var][h].append((obs.hour, idx))

    numeric = {}
    for name, bins in num_bins.items():
        arr = np.full(stay_hours, np.nan)
        for h, vals in enumerate(bins):
            if vals:
                arr[h] = float(np.mean(np.sort(np.asarray(vals))))
        numeric[name] = arr

    categorical = {}
    for name, bins in cat_bins.items():
        spec = schema.by_name[name]
        col = [None] * stay_hours
        for h, recs in enumerate(bins):
            if recs:
                _, idx = max(recs)
                col[h] = spec.categories[idx]
        categorical[name] = col

    return BinnedPatient(stay_hours=stay_hours, numeric=numeric, categorical=categorical)


def impute(binned: BinnedPatient, schema: FeatureSchema) -> list[FeatureVector]:
    """Normalize, forward-fill, backstop, and one-hot encode the binned values.

    Hours before the first observation of a numeric variable take the
    healthy-range median, which normalizes to exactly 0.5; categorical
    variables default to their first category until first observed.
    """
    H = binned.stay_hours
    n = schema.n_columns
    values = np.empty((H, n), dtype=np.float32)
    observed = np.zeros((H, n), dtype=bool)

    hours = np.arange(H)
    for s in schema.specs:
        start, stop = schema.column_range[s.name]
        if s.kind == NUMERIC:
            raw = binned.numeric[s.name]
            seen = ~np.isnan(raw)
            norm = ((raw - s.healthy_lo) / (s.healthy_hi - s.healthy_lo)).astype(np.float32)
            last_idx = np.maximum.accumulate(np.where(seen, hours, 0))
            has_prior = np.maximum.accumulate(seen)
            values[:, start] = np.where(has_prior, norm[last_idx], np.float32(0.5))
            observed[:, start] = seen
        else:
            raw_c = binned.categorical[s.name]
            seen = np.array([c is not None for c in raw_c])
            idx = np.array(
                [s.categories.index(c) if c is not None else 0 for c in raw_c]
            )
            last_idx = np.maximum.accumulate(np.where(seen, hours, 0))
            has_prior = np.maximum.accumulate(seen)
            active = np.where(has_prior, idx[last_idx], 0)
            block = np.zeros((H, stop - start), dtype=np.float32)
            block[hours, active] = 1.0
            values[:, start:stop] = block
            observed[:, start:stop] = seen[:, None]

    if not np.all(np.isfinite(values)):
        raise DataError("non-finite feature values after imputation")
    return [FeatureVector(hour=h, values=values[h], observed_mask=observed[h]) for h in range(H)]


def hourly_feature_matrix(
    observations: Iterable[Observation], schema: FeatureSchema, stay_hours: int
) -> tuple[np.ndarray, np.ndarray]:
    """Full pipeline for one patient; returns (values[H, n], observed[H, n])."""
    vectors = impute(bin_hourly(observations, schema, stay_hours), schema)
    values = np.stack([v.values for v in vectors])
    observed = np.stack([v.observed_mask for v in vectors])
    return values, observed
