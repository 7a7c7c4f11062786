"""Training loop: composite loss, teacher forcing, scheduling, early stopping.

The objective is a convex combination of two terms. The reconstruction
term is, per sequence, the time-averaged squared L2 distance between
predicted and target embedding tracks, averaged over the batch. The
regularization term is the cross-entropy between finding probabilities of
the predicted track and soft labels of the target track, both produced by
the frozen classifier, normalized per hour and per class (a strict
unnormalized-sum mode is available). The window-start hour is excluded
from both terms: its target equals the decoder prime by construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, NumericError, TrainingDivergedError
from .model import ModelConfig, TrajectoryModel
from .optim import AdamW, WarmupCosineSchedule, clip_global_norm
from .rng import substream
from .trajectory import PatientTensors

BCE_EPS = 1e-7

LOG_COLUMNS = ["step", "epoch", "lr", "grad_norm", "mse", "bce", "total", "val_total"]


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    epochs: int = 100
    early_stop_patience: int = 10
    batch_size: int = 32
    warmup_fraction: float = 0.10
    dropout: float = 0.1
    alpha: float = 0.5
    grad_clip_norm: float = 1.0
    seed: int = 0
    train_fraction: float = 0.70
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    bce_on_previous_track: bool = False
    bce_strict_sum: bool = False

    def validate(self) -> None:
        problems = []
        if not 0.0 <= self.alpha <= 1.0:
            problems.append(f"alpha {self.alpha} not in [0, 1]")
        for name in ("learning_rate", "epochs", "early_stop_patience", "batch_size", "grad_clip_norm"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            problems.append(f"warmup_fraction {self.warmup_fraction} not in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            problems.append(f"dropout {self.dropout} not in [0, 1)")
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            problems.append(f"split fractions sum to {total}, expected 1.0")
        if self.train_fraction <= 0:
            problems.append("train_fraction must be positive")
        if problems:
            raise ConfigError(problems)


# -- loss terms ----------------------------------------------------------------


def loss_mse(preds: list[Tensor], targets: list[np.ndarray]) -> Tensor:
    """Batch mean of per-sequence time-averaged squared L2 distances."""
    if len(preds) != len(targets) or not preds:
        raise DataError("loss_mse needs matching non-empty prediction/target lists")
    acc = None
    for pred, target in zip(preds, targets):
        diff = ad.sub(pred, Tensor(np.asarray(target, dtype=pred.data.dtype)))
        per_seq = ad.scale(ad.sum_all(ad.mul(diff, diff)), 1.0 / pred.shape[0])
        acc = per_seq if acc is None else ad.add(acc, per_seq)
    return ad.scale(acc, 1.0 / len(preds))


def loss_bce(probs: list[Tensor], soft_labels: list[np.ndarray], strict_sum: bool = False) -> Tensor:
    """Negative Bernoulli log-likelihood of probabilities against soft labels.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs. By
    default each sequence is normalized by hours x classes so the term is
    per-hour comparable with the reconstruction loss; `strict_sum` keeps
    the raw per-sequence sum instead. Both modes average over the batch.
    """
    if len(probs) != len(soft_labels) or not probs:
        raise DataError("loss_bce needs matching non-empty probability/label lists")
    acc = None
    for p, y in zip(probs, soft_labels):
        y = np.asarray(y, dtype=p.data.dtype)
        if p.shape != y.shape:
            raise DataError(f"probability shape {p.shape} != label shape {y.shape}")
        pc = ad.clip_values(p, BCE_EPS, 1.0 - BCE_EPS)
        log_p = ad.log(pc)
        log_1p = ad.log(ad.add(ad.scale(pc, -1.0), 1.0))
        ll = ad.add(ad.mul(Tensor(y), log_p), ad.mul(Tensor(1.0 - y), log_1p))
        per_seq = ad.scale(ad.sum_all(ll), -1.0)
        if not strict_sum:
            per_seq = ad.scale(per_seq, 1.0 / (p.shape[0] * p.shape[1]))
        acc = per_seq if acc is None else ad.add(acc, per_seq)
    return ad.scale(acc, 1.0 / len(probs))


def loss_total(mse_term: Tensor, bce_term: Tensor, alpha: float) -> Tensor:
    """(1 - alpha) * mse + alpha * bce; the convex weights appear once only."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return ad.add(ad.scale(mse_term, 1.0 - alpha), ad.scale(bce_term, alpha))


# -- data plumbing ---------------------------------------------------------------


def split_patients(ids: list[str], config: TrainConfig, seed: int) -> dict[str, list[str]]:
    """Deterministic patient-level split; never splits within a patient."""
    ids = sorted(ids)
    perm = substream(seed, "split").permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    n = len(ids)
    n_train = int(round(config.train_fraction * n))
    n_val = int(round(config.val_fraction * n))
    n_train = max(1, min(n_train, n))
    split = {
        "train": shuffled[:n_train],
        "val": shuffled[n_train : n_train + n_val],
        "test": shuffled[n_train + n_val :],
    }
    if not split["train"]:
        raise DataError("empty training split")
    if not split["val"]:
        # val_fraction 0 is the overfit-probe convention: validate on train
        split["val"] = list(split["train"])
    return split


@dataclass
class _Payload:
    fused: np.ndarray
    target: np.ndarray
    soft: np.ndarray
    prev_probs: np.ndarray | None


def _prepare(patients: dict[str, PatientTensors], ids: list[str], classifier, need_prev: bool) -> list[_Payload]:
    payloads = []
    for pid in ids:
        p = patients[pid]
        if p.n_hours < 2:
            raise DataError(f"patient {pid} has a window shorter than 2 hours")
        payloads.append(
            _Payload(
                fused=p.fused(),
                target=p.target,
                soft=classifier.predict_probs(p.target),
                prev_probs=classifier.predict_probs(p.previous) if need_prev else None,
            )
        )
    return payloads


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def add_step(self, step, epoch, lr, grad_norm, mse_v, bce_v, total_v):
        self.rows.append(
            {
                "step": step,
                "epoch": epoch,
                "lr": float(lr),
                "grad_norm": float(grad_norm),
                "mse": float(mse_v),
                "bce": float(bce_v),
                "total": float(total_v),
                "val_total": None,
            }
        )

    def mark_validation(self, val_total: float):
        self.rows[-1]["val_total"] = float(val_total)

    def step_totals(self) -> list[float]:
        return [r["total"] for r in self.rows]

    def validation_totals(self) -> list[float]:
        return [r["val_total"] for r in self.rows if r["val_total"] is not None]

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(LOG_COLUMNS)
            for r in self.rows:
                writer.writerow(
                    [
                        r["step"],
                        r["epoch"],
                        repr(r["lr"]),
                        repr(r["grad_norm"]),
                        repr(r["mse"]),
                        repr(r["bce"]),
                        repr(r["total"]),
                        "" if r["val_total"] is None else repr(r["val_total"]),
                    ]
                )


@dataclass
class TrainResult:
    model: TrajectoryModel
    log: TrainLog
    split: dict[str, list[str]]
    best_epoch: int
    best_val: float


def _batch_losses(model, classifier, payloads, cfg: TrainConfig, train: bool, rng):
    preds, targets, probs, softs = [], [], [], []
    for item in payloads:
        out = model.forward(item.fused, item.target, train=train, rng=rng, prime=item.target[0])
        rows = out.shape[0]
        pred = ad.slice_rows(out, 1, rows)
        preds.append(pred)
        targets.append(item.target[1:])
        softs.append(item.soft[1:])
        if cfg.bce_on_previous_track:
            probs.append(Tensor(item.prev_probs[1:]))
        else:
            probs.append(ad.sigmoid(classifier.logits(pred)))
    mse_term = loss_mse(preds, targets)
    bce_term = loss_bce(probs, softs, strict_sum=cfg.bce_strict_sum)
    return mse_term, bce_term, loss_total(mse_term, bce_term, cfg.alpha)


def validation_loss(model: TrajectoryModel, classifier, payloads, cfg: TrainConfig) -> float:
    """Teacher-forced composite loss with dropout off; mutates nothing."""
    detached = model.detached()
    _, _, total = _batch_losses(detached, classifier, payloads, cfg, train=False, rng=None)
    return float(total.data)


def train(
    patients: dict[str, PatientTensors],
    model_config: ModelConfig,
    train_config: TrainConfig,
    classifier,
    split: dict[str, list[str]] | None = None,
) -> TrainResult:
    """Run the full recipe and return the best-validation checkpoint.

    Stops early after `early_stop_patience` consecutive epochs without a
    strict validation improvement. On a non-finite loss the run aborts
    with the step index, retaining the best checkpoint so far.
    """
    train_config.validate()
    model_config.validate()
    model_config.dropout_rate = train_config.dropout
    seed = train_config.seed
    if split is None:
        split = split_patients(list(patients.keys()), train_config, seed)
    if not split["train"] or not split["val"]:
        raise DataError("train and validation splits must be non-empty")

    frozen = classifier.detached()
    train_payloads = _prepare(patients, split["train"], frozen, train_config.bce_on_previous_track)
    val_payloads = _prepare(patients, split["val"], frozen, train_config.bce_on_previous_track)

    model = TrajectoryModel.init(model_config, substream(seed, "init"))
    n_train = len(train_payloads)
    steps_per_epoch = math.ceil(n_train / train_config.batch_size)
    total_steps = train_config.epochs * steps_per_epoch
    schedule = WarmupCosineSchedule(
        train_config.learning_rate, total_steps, train_config.warmup_fraction
    )
    optimizer = AdamW(
        model.params,
        lr=train_config.learning_rate,
        weight_decay=train_config.weight_decay,
    )
    dropout_rng = substream(seed, "dropout")

    log = TrainLog()
    best_val = math.inf
    best_epoch = 0
    best_weights = model.weight_arrays()
    bad_epochs = 0
    step = 0

    for epoch in range(1, train_config.epochs + 1):
        order = substream(seed, "data", epoch).permutation(n_train)
        for start in range(0, n_train, train_config.batch_size):
            batch = [train_payloads[i] for i in order[start : start + train_config.batch_size]]
            lr_now = schedule.lr_at(step)
            optimizer.zero_grad()
            try:
                mse_term, bce_term, total = _batch_losses(
                    model, frozen, batch, train_config, train=True, rng=dropout_rng
                )
                if not np.isfinite(total.data):
                    raise NumericError("loss_total")
                total.backward()
            except NumericError as exc:
                raise TrainingDivergedError(step, best_params=best_weights, log=log) from exc
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in model.params.values()]
            grad_norm = clip_global_norm(grads, train_config.grad_clip_norm)
            for p, g in zip(model.params.values(), grads):
                p.grad = g
            optimizer.step(lr_now)
            log.add_step(step, epoch, lr_now, grad_norm, float(mse_term.data), float(bce_term.data), float(total.data))
            step += 1

        val_total = validation_loss(model, frozen, val_payloads, train_config)
        log.mark_validation(val_total)
        if val_total < best_val:
            best_val = val_total
            best_epoch = epoch
            best_weights = model.weight_arrays()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= train_config.early_stop_patience:
                break

    model.copy_weights_from(best_weights)
    return TrainResult(model=model, log=log, split=split, best_epoch=best_epoch, best_val=best_val)
