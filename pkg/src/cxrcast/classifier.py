"""Multi-label finding classifier over 512-dim image embeddings.

A single-hidden-layer MLP with sigmoid outputs, trained once on labeled
embeddings and then frozen. It serves three roles: labeling target tracks
(soft labels for the training regularizer and for current-prediction
ground truth), scoring predicted tracks, and scoring the previous-image
baseline.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, NumericError
from .io import load_checkpoint, save_checkpoint
from .metrics import auroc
from .optim import AdamW
from .rng import substream

FINDING_CLASSES = (
    "No Finding",
    "Cardiomegaly",
    "Lung Opacity",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
)
N_CLASSES = len(FINDING_CLASSES)
EMBEDDING_DIM = 512


@dataclass
class ClassifierConfig:
    hidden_dim: int = 256
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 30
    batch_size: int = 256
    val_fraction: float = 0.2
    num_classes: int = N_CLASSES


class FindingClassifier:
    def __init__(self, params: dict[str, Tensor], classes: tuple[str, ...] = FINDING_CLASSES):
        if len(classes) != N_CLASSES:
            raise DataError(f"expected {N_CLASSES} classes, got {len(classes)}")
        self.params = params
        self.classes = tuple(classes)

    @classmethod
    def init(cls, hidden_dim: int, rng: np.random.Generator) -> "FindingClassifier":
        s1 = 1.0 / np.sqrt(EMBEDDING_DIM)
        s2 = 1.0 / np.sqrt(hidden_dim)
        params = {
            "h.w": ad.parameter(rng.uniform(-s1, s1, size=(EMBEDDING_DIM, hidden_dim)).astype(np.float32)),
            "h.b": ad.parameter(np.zeros(hidden_dim, dtype=np.float32)),
            "out.w": ad.parameter(rng.uniform(-s2, s2, size=(hidden_dim, N_CLASSES)).astype(np.float32)),
            "out.b": ad.parameter(np.zeros(N_CLASSES, dtype=np.float32)),
        }
        return cls(params)

    def detached(self) -> "FindingClassifier":
        frozen = {k: Tensor(p.data, requires_grad=False) for k, p in self.params.items()}
        return FindingClassifier(frozen, self.classes)

    def logits(self, embeddings: Tensor) -> Tensor:
        """Graph-mode forward on a (T, 512) tensor; (T, 10) logits."""
        p = self.params
        h = ad.gelu(ad.linear(embeddings, p["h.w"], p["h.b"]))
        return ad.linear(h, p["out.w"], p["out.b"])

    def probabilities(self, embeddings: Tensor) -> Tensor:
        return ad.sigmoid(self.logits(embeddings))

    def predict_probs(self, embeddings: np.ndarray) -> np.ndarray:
        """Probabilities for one (512,) embedding or a (T, 512) batch."""
        emb = np.asarray(embeddings, dtype=np.float32)
        if not np.all(np.isfinite(emb)):
            raise NumericError("mlp_predict", "non-finite input embedding")
        single = emb.ndim == 1
        if single:
            emb = emb[None, :]
        probs = self.detached().probabilities(Tensor(emb)).data
        return probs[0] if single else probs

    def soft_labels(self, target_track: np.ndarray) -> np.ndarray:
        """Per-hour class probabilities of the interpolated target track."""
        return self.predict_probs(target_track)

    def save(self, path) -> None:
        save_checkpoint(
            path,
            {k: p.data for k, p in self.params.items()},
            {"kind": "finding_classifier", "classes": list(self.classes)},
        )

    @classmethod
    def load(cls, path) -> "FindingClassifier":
        arrays, manifest = load_checkpoint(path)
        params = {k: ad.parameter(v) for k, v in arrays.items()}
        return cls(params, classes=tuple(manifest["classes"]))


def train_classifier(
    embeddings: np.ndarray,
    labels: np.ndarray,
    config: ClassifierConfig,
    seed: int,
) -> tuple[FindingClassifier, dict]:
    """Fit the MLP on (N, 512) embeddings and (N, 10) binary labels.

    Returns the trained classifier and a held-out report with per-class
    AUROC (null where the held-out split lacks both label values).
    """
    X = np.asarray(embeddings, dtype=np.float32)
    Y = np.asarray(labels, dtype=np.float32)
    if X.ndim != 2 or X.shape[1] != EMBEDDING_DIM:
        raise DataError(f"embeddings must be (N, {EMBEDDING_DIM}), got {X.shape}")
    if Y.shape != (X.shape[0], N_CLASSES):
        raise DataError(f"labels must be (N, {N_CLASSES}), got {Y.shape}")
    if not set(np.unique(Y)) <= {0.0, 1.0}:
        raise DataError("labels must be binary")
    for c, name in enumerate(FINDING_CLASSES):
        if Y[:, c].sum() == 0:
            raise DataError(f"class {name!r} has no positive example in the training data")

    n = X.shape[0]
    order = substream(seed, "classifier-split").permutation(n)
    n_val = max(1, int(round(config.val_fraction * n))) if config.val_fraction > 0 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_idx.size == 0:
        raise DataError("no training examples left after the held-out split")

    clf = FindingClassifier.init(config.hidden_dim, substream(seed, "classifier-init"))
    opt = AdamW(clf.params, lr=config.learning_rate, weight_decay=config.weight_decay)
    for epoch in range(config.epochs):
        perm = substream(seed, "classifier-shuffle", epoch).permutation(train_idx.size)
        shuffled = train_idx[perm]
        for start in range(0, shuffled.size, config.batch_size):
            batch = shuffled[start : start + config.batch_size]
            loss = ad.bce_with_logits(
                clf.logits(Tensor(X[batch])), Tensor(Y[batch])
            )
            opt.zero_grad()
            loss.backward()
            opt.step()

    report = {"classes": {}, "n_train": int(train_idx.size), "n_val": int(n_val)}
    if n_val:
        probs = clf.predict_probs(X[val_idx])
        for c, name in enumerate(FINDING_CLASSES):
            report["classes"][name] = auroc(probs[:, c], Y[val_idx, c].astype(int))
    return clf, report
