"""Pre-norm encoder-decoder transformer over fused hourly inputs.

The encoder ingests the 594-dim fused sequence (clinical features +
previous-image embedding) under a causal self-attention mask. The decoder
ingests the embedding track shifted right by one hour, with causal
self-attention and position-aligned causal cross-attention (decoder hour t
sees encoder hours <= t). The output projection produces one 512-dim
embedding estimate per hour, so a prediction at hour t depends only on
inputs at hours <= t and decoder-side embeddings at hours < t.

`generate` replaces teacher embeddings with the model's own previous
outputs. It re-runs the decoder on the full-length input each step, which
keeps it bitwise identical to a teacher-forced pass over the same
sequence (masked attention assigns future positions probability exactly
zero, and all other ops are row-local).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CapacityError, ConfigError
from .io import load_checkpoint, save_checkpoint


@dataclass
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    ff_dim: int = 256
    dropout_rate: float = 0.1
    input_dim: int = 594
    output_dim: int = 512
    max_sequence_hours: int = 512

    def validate(self) -> None:
        problems = []
        if self.d_model % self.n_heads != 0:
            problems.append(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            problems.append(f"dropout_rate {self.dropout_rate} not in [0, 1)")
        if self.input_dim != 594:
            problems.append(f"input_dim must be 594, got {self.input_dim}")
        if self.output_dim != 512:
            problems.append(f"output_dim must be 512, got {self.output_dim}")
        for field in ("d_model", "n_heads", "n_encoder_layers", "n_decoder_layers", "ff_dim", "max_sequence_hours"):
            if getattr(self, field) < 1:
                problems.append(f"{field} must be >= 1")
        if problems:
            raise ConfigError(problems)


def sinusoidal_positions(n_positions: int, d_model: int) -> np.ndarray:
    """Fixed sin/cos position table over the hour index."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    dim = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, dim / d_model)
    table = np.zeros((n_positions, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return table.astype(np.float32)


def _uniform_init(rng: np.random.Generator, fan_in: int, shape, gain: float = 1.0) -> np.ndarray:
    bound = gain / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _ln(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.mul(ad.layer_norm(x, eps=1e-5), g), b)


class TrajectoryModel:
    """Transformer weights plus forward/generate passes."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        config.validate()
        self.config = config
        self.params = params
        self.positions = sinusoidal_positions(config.max_sequence_hours, config.d_model)

    # -- construction -------------------------------------------------------

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "TrajectoryModel":
        config.validate()
        d, ff = config.d_model, config.ff_dim
        params: dict[str, Tensor] = {}

        def proj(name, fan_in, shape, gain=1.0):
            params[f"{name}.w"] = ad.parameter(_uniform_init(rng, fan_in, shape, gain))
            params[f"{name}.b"] = ad.parameter(np.zeros(shape[-1], dtype=np.float32))

        def ln(name):
            params[f"{name}.g"] = ad.parameter(np.ones(d, dtype=np.float32))
            params[f"{name}.b"] = ad.parameter(np.zeros(d, dtype=np.float32))

        def attention(name):
            for part in ("q", "k", "v", "o"):
                proj(f"{name}.{part}", d, (d, d))

        proj("enc_in", config.input_dim, (config.input_dim, d))
        proj("dec_in", config.output_dim, (config.output_dim, d))
        for i in range(config.n_encoder_layers):
            ln(f"enc{i}.ln1")
            attention(f"enc{i}.attn")
            ln(f"enc{i}.ln2")
            proj(f"enc{i}.ff1", d, (d, ff))
            proj(f"enc{i}.ff2", ff, (ff, d))
        ln("enc_final")
        for i in range(config.n_decoder_layers):
            ln(f"dec{i}.ln1")
            attention(f"dec{i}.self")
            ln(f"dec{i}.ln2")
            attention(f"dec{i}.cross")
            ln(f"dec{i}.ln3")
            proj(f"dec{i}.ff1", d, (d, ff))
            proj(f"dec{i}.ff2", ff, (ff, d))
        ln("dec_final")
        # near-zero output projection: initial predictions sit near the bias
        proj("out", d, (d, config.output_dim), gain=0.01)
        return cls(config, params)

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def detached(self) -> "TrajectoryModel":
        """Shared-weight view that records no computation graph."""
        clone = TrajectoryModel.__new__(TrajectoryModel)
        clone.config = self.config
        clone.params = {
            k: Tensor(p.data, requires_grad=False) for k, p in self.params.items()
        }
        clone.positions = self.positions
        return clone

    def copy_weights_from(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.data = arrays[name].astype(np.float32).reshape(p.data.shape).copy()

    def weight_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    # -- forward pieces -----------------------------------------------------

    def _attention(
        self,
        name: str,
        x_q: Tensor,
        x_kv: Tensor,
        mask: np.ndarray,
        train: bool,
        rng,
    ) -> Tensor:
        cfg = self.config
        p = self.params
        heads, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        tq, tk = x_q.shape[0], x_kv.shape[0]

        def split(t: Tensor, length: int) -> Tensor:
            return ad.swap_axes(ad.reshape(t, (length, heads, dh)), 0, 1)

        q = split(ad.linear(x_q, p[f"{name}.q.w"], p[f"{name}.q.b"]), tq)
        k = split(ad.linear(x_kv, p[f"{name}.k.w"], p[f"{name}.k.b"]), tk)
        v = split(ad.linear(x_kv, p[f"{name}.v.w"], p[f"{name}.v.b"]), tk)
        scores = ad.scale(ad.matmul(q, ad.swap_axes(k, 1, 2)), 1.0 / math.sqrt(dh))
        probs = ad.softmax(scores, mask=mask)
        probs = ad.dropout(probs, cfg.dropout_rate, rng, train)
        ctx = ad.reshape(ad.swap_axes(ad.matmul(probs, v), 0, 1), (tq, cfg.d_model))
        return ad.linear(ctx, p[f"{name}.o.w"], p[f"{name}.o.b"])

    def _ff(self, name: str, x: Tensor) -> Tensor:
        p = self.params
        h = ad.gelu(ad.linear(x, p[f"{name}.ff1.w"], p[f"{name}.ff1.b"]))
        return ad.linear(h, p[f"{name}.ff2.w"], p[f"{name}.ff2.b"])

    def _drop(self, x: Tensor, train: bool, rng) -> Tensor:
        return ad.dropout(x, self.config.dropout_rate, rng, train)

    def _check_length(self, n_hours: int) -> None:
        if n_hours < 1:
            raise ValueError("sequence must contain at least one hour")
        if n_hours > self.config.max_sequence_hours:
            raise CapacityError(
                f"sequence of {n_hours} hours exceeds max_sequence_hours "
                f"{self.config.max_sequence_hours}"
            )

    def encode(self, fused: np.ndarray, train: bool = False, rng=None) -> Tensor:
        cfg = self.config
        p = self.params
        n = fused.shape[0]
        self._check_length(n)
        if fused.shape != (n, cfg.input_dim):
            raise ValueError(f"fused inputs must be (T, {cfg.input_dim}), got {fused.shape}")
        causal = np.tril(np.ones((n, n), dtype=bool))
        x = ad.linear(Tensor(fused.astype(np.float32)), p["enc_in.w"], p["enc_in.b"])
        x = ad.add(x, Tensor(self.positions[:n]))
        x = self._drop(x, train, rng)
        for i in range(cfg.n_encoder_layers):
            a_in = _ln(x, p[f"enc{i}.ln1.g"], p[f"enc{i}.ln1.b"])
            a = self._attention(f"enc{i}.attn", a_in, a_in, causal, train, rng)
            x = ad.add(x, self._drop(a, train, rng))
            f = self._ff(f"enc{i}", _ln(x, p[f"enc{i}.ln2.g"], p[f"enc{i}.ln2.b"]))
            x = ad.add(x, self._drop(f, train, rng))
        return _ln(x, p["enc_final.g"], p["enc_final.b"])

    def decode(
        self, enc_out: Tensor, dec_inputs: np.ndarray, train: bool = False, rng=None
    ) -> Tensor:
        cfg = self.config
        p = self.params
        n = dec_inputs.shape[0]
        if n != enc_out.shape[0]:
            raise ValueError(
                f"decoder inputs cover {n} hours but encoder outputs cover {enc_out.shape[0]}"
            )
        causal = np.tril(np.ones((n, n), dtype=bool))
        x = ad.linear(Tensor(dec_inputs.astype(np.float32)), p["dec_in.w"], p["dec_in.b"])
        x = ad.add(x, Tensor(self.positions[:n]))
        x = self._drop(x, train, rng)
        for i in range(cfg.n_decoder_layers):
            a_in = _ln(x, p[f"dec{i}.ln1.g"], p[f"dec{i}.ln1.b"])
            a = self._attention(f"dec{i}.self", a_in, a_in, causal, train, rng)
            x = ad.add(x, self._drop(a, train, rng))
            c = self._attention(
                f"dec{i}.cross", _ln(x, p[f"dec{i}.ln2.g"], p[f"dec{i}.ln2.b"]),
                enc_out, causal, train, rng,
            )
            x = ad.add(x, self._drop(c, train, rng))
            f = self._ff(f"dec{i}", _ln(x, p[f"dec{i}.ln3.g"], p[f"dec{i}.ln3.b"]))
            x = ad.add(x, self._drop(f, train, rng))
        x = _ln(x, p["dec_final.g"], p["dec_final.b"])
        return ad.linear(x, p["out.w"], p["out.b"])

    # -- public passes ------------------------------------------------------

    def forward(
        self,
        fused: np.ndarray,
        teacher_targets: np.ndarray,
        train: bool = False,
        rng=None,
        prime: np.ndarray | None = None,
    ) -> Tensor:
        """Teacher-forced pass: decoder hour t conditions on targets < t."""
        n = fused.shape[0]
        if teacher_targets.shape != (n, self.config.output_dim):
            raise ValueError(
                f"teacher targets must be (T, {self.config.output_dim}), got {teacher_targets.shape}"
            )
        if prime is None:
            prime = teacher_targets[0]
        dec_inputs = np.concatenate(
            [np.asarray(prime, dtype=np.float32)[None, :], teacher_targets[:-1]], axis=0
        )
        enc_out = self.encode(fused, train=train, rng=rng)
        return self.decode(enc_out, dec_inputs, train=train, rng=rng)

    def generate(self, fused: np.ndarray, prime: np.ndarray) -> np.ndarray:
        """Autoregressive pass: decoder consumes its own previous outputs."""
        model = self.detached()
        n = fused.shape[0]
        enc_out = model.encode(fused, train=False)
        dec_inputs = np.zeros((n, self.config.output_dim), dtype=np.float32)
        dec_inputs[0] = np.asarray(prime, dtype=np.float32)
        preds = np.zeros((n, self.config.output_dim), dtype=np.float32)
        for t in range(n):
            out = model.decode(enc_out, dec_inputs, train=False)
            preds[t] = out.data[t]
            if t + 1 < n:
                dec_inputs[t + 1] = preds[t]
        return preds

    # -- persistence --------------------------------------------------------

    def save(self, path, rng_state=None) -> None:
        save_checkpoint(
            path,
            {k: p.data for k, p in self.params.items()},
            {
                "kind": "trajectory_model",
                "config": asdict(self.config),
                "rng_state": rng_state,
            },
        )

    @classmethod
    def load(cls, path) -> "TrajectoryModel":
        arrays, manifest = load_checkpoint(path)
        config = ModelConfig(**manifest["config"])
        params = {k: ad.parameter(v) for k, v in arrays.items()}
        return cls(config, params)
