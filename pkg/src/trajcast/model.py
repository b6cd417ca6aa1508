"""Non-autoregressive multi-horizon trajectory forecasting network.

Pipeline: Conv1D channel-mix embedding of 78-bit Gray-coded points, a
Transformer encoder with attention-based pooling into one trajectory-level
vector, a horizon-aware context generator fusing that vector with learned
per-horizon embeddings, and a causally masked decoder prompted with the
observation differential embeddings that emits per-bit probabilities for the
48-bit differential codes of all horizons in a single pass.

Training is multi-binary classification with BCE over the output bits,
optimized with Adam. Everything runs on the in-package autodiff engine in
double precision by default.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import codec
from .autodiff import Tensor
from .codec import (
    BitWidthSpec,
    QuantizationSpec,
    TrajectoryPoint,
    DEFAULT_QUANT,
    DEFAULT_WIDTHS,
)

CHECKPOINT_MAGIC = b"TRAJCAST1"

LOSS_CLIP_EPS = 1e-7


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class ShapeMismatchError(ValueError):
    """An input array does not match the configured dimensions."""


class NonFiniteError(ArithmeticError):
    """An activation overflowed to a non-finite value."""


class NonFiniteGradientError(ArithmeticError):
    """A gradient became non-finite; the training step is aborted."""


class HorizonOutOfRangeError(ValueError):
    """Requested horizon exceeds the embedding table size."""


class ConfigMismatchError(ValueError):
    """Checkpoint configuration differs from the requested configuration."""


@dataclass(frozen=True)
class ModelConfig:
    """Network dimensions and training-relevant switches."""

    k: int = 9                    # observation window length
    n: int = 15                   # prediction horizons
    point_embed_dim: int = 128
    horizon_embed_dim: int = 128
    model_dim: int = 64           # desk-scale default; paper-scale 768 via config
    encoder_layers: int = 4
    decoder_layers: int = 2
    attention_heads: int = 4
    feedforward_dim: int = 0      # 0 means 4 * model_dim
    conv_kernel: int = 3
    conv_channels: int = 8
    dropout: float = 0.0
    max_horizons: int = 32
    activation: str = "gelu"      # fixed project-wide nonlinearity
    precision: str = "double"     # "double" or "single"
    seed: int = 0

    def __post_init__(self):
        if self.model_dim % self.attention_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by "
                f"{self.attention_heads} attention heads"
            )
        if self.k < 2:
            raise ConfigError("k must be at least 2 (differential prompt needs k-1 >= 1)")
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if self.n > self.max_horizons:
            raise ConfigError(f"n {self.n} exceeds max_horizons {self.max_horizons}")
        if self.conv_kernel % 2 != 1:
            raise ConfigError("conv_kernel must be odd to preserve length")
        if self.activation != "gelu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.precision not in ("double", "single"):
            raise ConfigError(f"precision must be 'double' or 'single', got {self.precision!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def ff_dim(self) -> int:
        return self.feedforward_dim if self.feedforward_dim else 4 * self.model_dim

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class SoftPrediction:
    """Per-horizon, per-bit probabilities produced by the decoder."""

    probabilities: np.ndarray  # [n, diff_total]

    def __post_init__(self):
        p = self.probabilities
        if p.ndim != 2:
            raise ShapeMismatchError(f"expected 2-D probabilities, got shape {p.shape}")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("probabilities must lie in [0, 1]")


class ParameterStore:
    """Named parameter arrays with a stable, deterministic iteration order."""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}

    def register(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(array), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> List[str]:
        return list(self._params.keys())

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        if set(arrays) != set(self._params):
            missing = set(self._params) - set(arrays)
            extra = set(arrays) - set(self._params)
            raise ConfigMismatchError(
                f"parameter name mismatch (missing={sorted(missing)}, extra={sorted(extra)})"
            )
        for name, arr in arrays.items():
            t = self._params[name]
            if t.data.shape != arr.shape:
                raise ConfigMismatchError(
                    f"shape mismatch for {name}: {t.data.shape} vs {arr.shape}"
                )
            t.data = arr.astype(t.data.dtype, copy=True)


class Adam:
    """Adam optimizer over a ParameterStore."""

    def __init__(self, params: ParameterStore, lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "m": {k: a.copy() for k, a in self.m.items()},
            "v": {k: a.copy() for k, a in self.v.items()},
        }

    def load_state_dict(self, state: dict):
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        for k in self.m:
            self.m[k] = state["m"][k].astype(self.m[k].dtype, copy=True)
            self.v[k] = state["v"][k].astype(self.v[k].dtype, copy=True)


def sinusoidal_encoding(length: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Fixed sine/cosine positional encoding, shape [length, dim]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (idx // 2) / dim)
    enc = np.zeros((length, dim), dtype=np.float64)
    enc[:, 0::2] = np.sin(angle[:, 0::2])
    enc[:, 1::2] = np.cos(angle[:, 1::2])
    return enc.astype(dtype)


def _im2col(bits: np.ndarray, kernel: int) -> np.ndarray:
    """Sliding windows of a batch of bit rows: [B, T, L] -> [B, T, L, kernel]."""
    pad = (kernel - 1) // 2
    length = bits.shape[-1]
    padded = np.pad(bits, ((0, 0), (0, 0), (pad, pad)))
    return np.stack([padded[..., i : i + length] for i in range(kernel)], axis=-1)


def _affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, w), b)


class Forecaster:
    """The full network plus its codec bindings.

    Inference with frozen parameters is safe for concurrent callers; training
    mutates the parameter store and must be single-writer.
    """

    def __init__(
        self,
        config: ModelConfig = ModelConfig(),
        quant: QuantizationSpec = DEFAULT_QUANT,
        widths: BitWidthSpec = DEFAULT_WIDTHS,
    ):
        self.config = config
        self.quant = quant
        self.widths = widths
        self.params = ParameterStore()
        self._dropout_rng = np.random.default_rng(config.seed + 1)
        self._init_parameters()
        # 1/M_j weight for every bit of attribute j, used by the loss
        w = []
        for width in widths.diff_widths:
            w.extend([1.0 / width] * width)
        self._loss_weights = np.array(w, dtype=config.dtype)

    # ------------------------------------------------------------------
    # parameters
    # ------------------------------------------------------------------

    def _init_parameters(self):
        cfg = self.config
        dt = cfg.dtype
        rng = np.random.default_rng(cfg.seed)

        def uniform(fan_in, shape):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(dt)

        def affine(name, fan_in, fan_out):
            self.params.register(f"{name}.weight", uniform(fan_in, (fan_in, fan_out)))
            self.params.register(f"{name}.bias", np.zeros(fan_out, dtype=dt))

        def norm(name, dim):
            self.params.register(f"{name}.gamma", np.ones(dim, dtype=dt))
            self.params.register(f"{name}.beta", np.zeros(dim, dtype=dt))

        def block(prefix, dim, ff):
            norm(f"{prefix}.ln1", dim)
            for proj in ("wq", "wk", "wv", "wo"):
                affine(f"{prefix}.{proj}", dim, dim)
            norm(f"{prefix}.ln2", dim)
            affine(f"{prefix}.ff1", dim, ff)
            affine(f"{prefix}.ff2", ff, dim)

        in_bits = self.widths.input_total
        diff_bits = self.widths.diff_total
        d, p, he = cfg.model_dim, cfg.point_embed_dim, cfg.horizon_embed_dim

        affine("tpe.conv", cfg.conv_kernel, cfg.conv_channels)
        affine("tpe.flatten", in_bits * cfg.conv_channels, p)
        affine("encoder.proj", p, d)
        for i in range(cfg.encoder_layers):
            block(f"encoder.block{i}", d, cfg.ff_dim)
        norm("encoder.final", d)
        affine("asa.score", d, 1)
        affine("hacg.embed", cfg.max_horizons, he)
        affine("hacg.mlp1", d + he, d)
        affine("hacg.mlp2", d, d)
        affine("diff.conv", cfg.conv_kernel, cfg.conv_channels)
        affine("diff.flatten", diff_bits * cfg.conv_channels, p)
        affine("diff.proj", p, d)
        for i in range(cfg.decoder_layers):
            block(f"dpd.block{i}", d, cfg.ff_dim)
        norm("dpd.final", d)
        affine("predictor", d, diff_bits)

    # ------------------------------------------------------------------
    # building blocks
    # ------------------------------------------------------------------

    def _dropout(self, x: Tensor, train_mode: bool) -> Tensor:
        p = self.config.dropout
        if not train_mode or p == 0.0:
            return x
        keep = (self._dropout_rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
        return ad.mul(x, Tensor(keep))

    def _attention(self, x: Tensor, prefix: str, mask: Optional[np.ndarray]) -> Tensor:
        cfg = self.config
        b, t, d = x.shape
        heads = cfg.attention_heads
        dh = d // heads
        pr = self.params

        def heads_split(u):
            return ad.transpose(ad.reshape(u, (b, t, heads, dh)), (0, 2, 1, 3))

        q = heads_split(_affine(x, pr[f"{prefix}.wq.weight"], pr[f"{prefix}.wq.bias"]))
        k = heads_split(_affine(x, pr[f"{prefix}.wk.weight"], pr[f"{prefix}.wk.bias"]))
        v = heads_split(_affine(x, pr[f"{prefix}.wv.weight"], pr[f"{prefix}.wv.bias"]))
        scores = ad.mul(
            ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh)
        )
        if mask is not None:
            scores = ad.add(scores, Tensor(mask))
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(attn, v)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
        return _affine(ctx, pr[f"{prefix}.wo.weight"], pr[f"{prefix}.wo.bias"])

    def _block(self, x: Tensor, prefix: str, mask, train_mode: bool) -> Tensor:
        pr = self.params
        h = ad.layer_norm(x, pr[f"{prefix}.ln1.gamma"], pr[f"{prefix}.ln1.beta"])
        x = ad.add(x, self._dropout(self._attention(h, prefix, mask), train_mode))
        h = ad.layer_norm(x, pr[f"{prefix}.ln2.gamma"], pr[f"{prefix}.ln2.beta"])
        f = _affine(
            ad.gelu(_affine(h, pr[f"{prefix}.ff1.weight"], pr[f"{prefix}.ff1.bias"])),
            pr[f"{prefix}.ff2.weight"],
            pr[f"{prefix}.ff2.bias"],
        )
        return ad.add(x, self._dropout(f, train_mode))

    def _conv_embed(self, bits: np.ndarray, prefix: str) -> Tensor:
        """Conv1D over the bit axis, nonlinearity, learned affine flatten."""
        cfg = self.config
        pr = self.params
        cols = Tensor(_im2col(bits, cfg.conv_kernel).astype(cfg.dtype))
        out = ad.add(
            ad.matmul(cols, pr[f"{prefix}.conv.weight"]), pr[f"{prefix}.conv.bias"]
        )
        out = ad.gelu(out)
        b, t, length, ch = out.shape
        flat = ad.reshape(out, (b, t, length * ch))
        return _affine(flat, pr[f"{prefix}.flatten.weight"], pr[f"{prefix}.flatten.bias"])

    def _causal_mask(self, t: int) -> np.ndarray:
        mask = np.triu(np.full((t, t), -1e9, dtype=self.config.dtype), k=1)
        return mask

    # ------------------------------------------------------------------
    # module-level operations
    # ------------------------------------------------------------------

    def tpe_embed(self, obs_bits: np.ndarray) -> Tensor:
        """[B, k, 78] bit rows -> [B, k, point_embed_dim] point embeddings."""
        obs_bits = self._check_bits(obs_bits, self.config.k, self.widths.input_total)
        return self._conv_embed(obs_bits, "tpe")

    def encoder_forward(
        self, point_embeds: Tensor, train_mode: bool = False
    ) -> Tuple[Tensor, Tensor]:
        """Per-position hidden states and the pooled trajectory embedding."""
        cfg = self.config
        pr = self.params
        if point_embeds.shape[-1] != cfg.point_embed_dim:
            raise ShapeMismatchError(
                f"expected point embeddings of dim {cfg.point_embed_dim}, "
                f"got {point_embeds.shape[-1]}"
            )
        x = _affine(point_embeds, pr["encoder.proj.weight"], pr["encoder.proj.bias"])
        x = ad.add(x, Tensor(sinusoidal_encoding(x.shape[1], cfg.model_dim, cfg.dtype)))
        for i in range(cfg.encoder_layers):
            x = self._block(x, f"encoder.block{i}", None, train_mode)
        x = ad.layer_norm(x, pr["encoder.final.gamma"], pr["encoder.final.beta"])
        traj = self.asa(x)
        if not np.all(np.isfinite(traj.data)):
            raise NonFiniteError("trajectory embedding overflowed")
        return x, traj

    def asa(self, hiddens: Tensor) -> Tensor:
        """Softmax-weighted pooling over the temporal axis: [B, k, D] -> [B, D]."""
        pr = self.params
        scores = _affine(hiddens, pr["asa.score.weight"], pr["asa.score.bias"])
        weights = ad.softmax(scores, axis=1)
        return ad.reduce_sum(ad.mul(weights, hiddens), axis=1)

    def asa_weights(self, hiddens: Tensor) -> np.ndarray:
        """Attention weights of the pooling step (diagnostics)."""
        pr = self.params
        scores = _affine(hiddens, pr["asa.score.weight"], pr["asa.score.bias"])
        return ad.softmax(scores, axis=1).data

    def hacg(self, traj_enc: Tensor, n: Optional[int] = None) -> Tensor:
        """Per-horizon context rows from the pooled trajectory embedding."""
        cfg = self.config
        pr = self.params
        n = cfg.n if n is None else n
        if n > cfg.max_horizons:
            raise HorizonOutOfRangeError(
                f"horizon {n} exceeds embedding table size {cfg.max_horizons}"
            )
        one_hot = np.eye(cfg.max_horizons, dtype=cfg.dtype)[:n]
        he = _affine(Tensor(one_hot), pr["hacg.embed.weight"], pr["hacg.embed.bias"])
        b = traj_enc.shape[0]
        d = cfg.model_dim
        traj_rows = ad.broadcast_to(ad.reshape(traj_enc, (b, 1, d)), (b, n, d))
        he_rows = ad.broadcast_to(
            ad.reshape(he, (1, n, cfg.horizon_embed_dim)), (b, n, cfg.horizon_embed_dim)
        )
        fused = ad.concat([traj_rows, he_rows], axis=2)
        hidden = ad.gelu(_affine(fused, pr["hacg.mlp1.weight"], pr["hacg.mlp1.bias"]))
        return _affine(hidden, pr["hacg.mlp2.weight"], pr["hacg.mlp2.bias"])

    def diff_embed(self, diff_bits: np.ndarray) -> Tensor:
        """[B, k-1, 48] differential codes -> [B, k-1, model_dim] embeddings."""
        diff_bits = self._check_bits(
            diff_bits, self.config.k - 1, self.widths.diff_total
        )
        pr = self.params
        embedded = self._conv_embed(diff_bits, "diff")
        return _affine(embedded, pr["diff.proj.weight"], pr["diff.proj.bias"])

    def dpd_forward(
        self, diff_embeds: Tensor, contexts: Tensor, train_mode: bool = False
    ) -> Tensor:
        """Masked decoding of [prompt ; contexts]; probabilities for the last n rows."""
        cfg = self.config
        pr = self.params
        if diff_embeds.shape[-1] != cfg.model_dim or contexts.shape[-1] != cfg.model_dim:
            raise ShapeMismatchError("decoder inputs must have model_dim features")
        n = contexts.shape[1]
        seq = ad.concat([diff_embeds, contexts], axis=1)
        t = seq.shape[1]
        seq = ad.add(seq, Tensor(sinusoidal_encoding(t, cfg.model_dim, cfg.dtype)))
        mask = self._causal_mask(t)
        for i in range(cfg.decoder_layers):
            seq = self._block(seq, f"dpd.block{i}", mask, train_mode)
        seq = ad.layer_norm(seq, pr["dpd.final.gamma"], pr["dpd.final.beta"])
        tail = ad.slice_axis(seq, 1, t - n, t)
        logits = _affine(tail, pr["predictor.weight"], pr["predictor.bias"])
        return ad.sigmoid(logits)

    def forward_bits(
        self,
        obs_bits: np.ndarray,
        diff_bits: np.ndarray,
        n: Optional[int] = None,
        train_mode: bool = False,
    ) -> Tensor:
        """One non-autoregressive pass: bit arrays in, [B, n, 48] probabilities out."""
        point_embeds = self.tpe_embed(obs_bits)
        _, traj = self.encoder_forward(point_embeds, train_mode)
        contexts = self.hacg(traj, n)
        prompts = self.diff_embed(diff_bits)
        return self.dpd_forward(prompts, contexts, train_mode)

    def _check_bits(self, bits: np.ndarray, rows: int, width: int) -> np.ndarray:
        bits = np.asarray(bits, dtype=self.config.dtype)
        if bits.ndim == 2:
            bits = bits[None, ...]
        if bits.ndim != 3 or bits.shape[1] != rows or bits.shape[2] != width:
            raise ShapeMismatchError(
                f"expected bit array [batch, {rows}, {width}], got {bits.shape}"
            )
        return bits

    # ------------------------------------------------------------------
    # loss and training
    # ------------------------------------------------------------------

    def bce_loss(self, pred: Tensor, target: np.ndarray) -> Tensor:
        """Mean over (sample, horizon) of the attribute-wise mean-bit BCE sum."""
        target = np.asarray(target, dtype=self.config.dtype)
        if target.ndim == 2:
            target = target[None, ...]
        if tuple(pred.shape) != target.shape:
            raise ShapeMismatchError(
                f"prediction shape {pred.shape} vs target shape {target.shape}"
            )
        p = ad.clip(pred, LOSS_CLIP_EPS, 1.0 - LOSS_CLIP_EPS)
        t = Tensor(target)
        per_bit = ad.mul(
            ad.add(
                ad.mul(t, ad.log(p)),
                ad.mul(ad.sub(1.0, t), ad.log(ad.sub(1.0, p))),
            ),
            -1.0,
        )
        per_pair = ad.reduce_sum(
            ad.mul(per_bit, Tensor(self._loss_weights)), axis=-1
        )
        return ad.reduce_mean(per_pair)

    def train_step(
        self,
        obs_bits: np.ndarray,
        diff_bits: np.ndarray,
        target_bits: np.ndarray,
        optimizer: Adam,
    ) -> float:
        """One forward/backward/Adam cycle; returns the pre-update loss."""
        pred = self.forward_bits(obs_bits, diff_bits, train_mode=True)
        loss = self.bce_loss(pred, target_bits)
        if not np.isfinite(loss.data):
            raise NonFiniteGradientError("loss is not finite")
        self.params.zero_grad()
        loss.backward()
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"gradient of {name} is not finite")
        optimizer.step()
        return float(loss.data)

    # ------------------------------------------------------------------
    # prediction
    # ------------------------------------------------------------------

    def forward_window(
        self, points: Sequence[TrajectoryPoint], n: Optional[int] = None
    ) -> SoftPrediction:
        """Encode one observation window and run a single forward pass."""
        if len(points) != self.config.k:
            raise ShapeMismatchError(
                f"expected {self.config.k} observations, got {len(points)}"
            )
        obs, diffs = codec.window_bit_arrays(points, self.quant, self.widths)
        with ad.no_grad():
            probs = self.forward_bits(obs, diffs, n=n)
        return SoftPrediction(probabilities=probs.data[0])

    def traj_encoding(self, points: Sequence[TrajectoryPoint]) -> np.ndarray:
        """Pooled trajectory-level embedding of one window (for external analysis)."""
        obs, _ = codec.window_bit_arrays(points, self.quant, self.widths)
        with ad.no_grad():
            _, traj = self.encoder_forward(self.tpe_embed(obs))
        return traj.data[0].copy()

    def _decode_soft(self, soft_rows: np.ndarray) -> List[codec.PointDelta]:
        return [
            codec.decode_delta_code(codec.harden(row, self.widths), self.widths)
            for row in soft_rows
        ]

    def predict(
        self, points: Sequence[TrajectoryPoint], mode: str = "direct"
    ) -> List[TrajectoryPoint]:
        """Forecast n future points from k observations.

        Direct mode runs exactly one forward pass for all horizons;
        autoregressive mode runs a single-horizon pass n times, feeding each
        prediction back as a pseudo-observation. Reconstruction clamps to the
        representable envelope so a prediction is always produced.
        """
        if mode == "direct":
            soft = self.forward_window(points)
            anchor = codec.quantize_point(points[-1], self.quant, self.widths)
            deltas = self._decode_soft(soft.probabilities)
            return codec.reconstruct(
                anchor,
                deltas,
                self.quant,
                self.widths,
                clamp=True,
                anchor_timestamp=points[-1].timestamp,
                callsign=points[-1].callsign,
            )
        if mode == "autoregressive":
            window = list(points)
            out: List[TrajectoryPoint] = []
            for _ in range(self.config.n):
                soft = self.forward_window(window, n=1)
                anchor = codec.quantize_point(window[-1], self.quant, self.widths)
                delta = self._decode_soft(soft.probabilities)[0]
                nxt = codec.reconstruct(
                    anchor,
                    [delta],
                    self.quant,
                    self.widths,
                    clamp=True,
                    anchor_timestamp=window[-1].timestamp,
                    callsign=window[-1].callsign,
                )[0]
                out.append(nxt)
                window = window[1:] + [nxt]
            return out
        raise ConfigError(f"unknown prediction mode {mode!r}")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _full_config_dict(model: Forecaster) -> dict:
    return {
        "model": model.config.to_dict(),
        "quant": dataclasses.asdict(model.quant),
        "widths": dataclasses.asdict(model.widths),
    }


def save_checkpoint(
    path,
    model: Forecaster,
    optimizer: Optional[Adam] = None,
    step: int = 0,
    extra: Optional[dict] = None,
):
    """Write a self-describing checkpoint container.

    Layout: magic string, 8-byte little-endian header length, JSON header
    (config, step, parameter manifest, optimizer metadata), then the raw
    little-endian array payloads in manifest order.
    """
    manifest = []
    payloads = []
    for name, p in model.params.items():
        arr = np.ascontiguousarray(p.data)
        code = "<f8" if arr.dtype == np.float64 else "<f4"
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": code})
        payloads.append(arr.astype(code).tobytes())
    opt_header = None
    if optimizer is not None:
        opt_header = {
            "t": optimizer.t,
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
        }
        for name, _ in model.params.items():
            for arr in (optimizer.m[name], optimizer.v[name]):
                arr = np.ascontiguousarray(arr)
                code = "<f8" if arr.dtype == np.float64 else "<f4"
                payloads.append(arr.astype(code).tobytes())
    header = {
        "config": _full_config_dict(model),
        "step": step,
        "params": manifest,
        "optimizer": opt_header,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in payloads:
            fh.write(chunk)


def load_checkpoint(
    path, expected_config: Optional[dict] = None
) -> Tuple[Forecaster, Optional[dict], int, dict]:
    """Rebuild a Forecaster (and optimizer state, if stored) from a container.

    If ``expected_config`` is given it must equal the stored config exactly.
    Returns (model, optimizer_state_or_None, step, extra).
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint container (bad magic {magic!r})")
        (length,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(length).decode("utf-8"))
        stored = header["config"]
        if expected_config is not None and expected_config != stored:
            raise ConfigMismatchError(
                "checkpoint config does not match the requested config"
            )
        model = Forecaster(
            config=ModelConfig.from_dict(stored["model"]),
            quant=QuantizationSpec(**stored["quant"]),
            widths=BitWidthSpec(**stored["widths"]),
        )

        def read_array(meta):
            dtype = np.dtype(meta["dtype"])
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            raw = fh.read(count * dtype.itemsize)
            return np.frombuffer(raw, dtype=dtype).reshape(meta["shape"]).copy()

        arrays = {meta["name"]: read_array(meta) for meta in header["params"]}
        model.params.load_arrays(arrays)
        opt_state = None
        if header["optimizer"] is not None:
            m, v = {}, {}
            for meta in header["params"]:
                m[meta["name"]] = read_array(meta)
                v[meta["name"]] = read_array(meta)
            opt_state = dict(header["optimizer"], m=m, v=v)
    return model, opt_state, int(header["step"]), header.get("extra", {})
