"""The two sequence models: a decoder-only LM and an encoder-decoder
translation model, both pre-norm transformers with tied embedding and output
projection.

Both models expose ``logits`` returning an autodiff Tensor; the
``*_step_distributions`` helpers run outside the tape and return plain
probability arrays for analysis and decoding.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, InvalidInputError
from .probability import softmax_array
from .seeding import stream_rng

ATTN_MASK_VALUE = -1e9


@dataclass(frozen=True)
class ArchConfig:
    """Architecture sizes. Defaults are CPU-trainable toy sizes; a full-scale
    setup would look more like 6 layers, d_model 512, 8 heads, d_ff 2048 and
    dropout 0.3."""

    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 2
    d_ff: int = 128
    dropout: float = 0.0
    precision: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**d)


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, int], dtype) -> np.ndarray:
    """U(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-a, a, size=shape).astype(dtype)


def init_parameters(
    spec: list[tuple[str, tuple[int, ...], str]], seed: int, dtype
) -> dict[str, Tensor]:
    """Materialize a parameter set from (name, shape, kind) entries.

    kind is one of "weight" (glorot uniform), "zeros" (biases) or "ones"
    (layer-norm gains). Deterministic for a fixed seed: the rng is consumed
    in spec order.
    """
    rng = stream_rng(seed, "init")
    params: dict[str, Tensor] = {}
    for name, shape, kind in spec:
        if kind == "weight":
            data = glorot_uniform(rng, shape, dtype)
        elif kind == "zeros":
            data = np.zeros(shape, dtype=dtype)
        elif kind == "ones":
            data = np.ones(shape, dtype=dtype)
        else:
            raise ConfigError(f"unknown parameter kind {kind!r}")
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def sinusoidal_positions(length: int, d_model: int, dtype) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    dim = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (dim // 2) / d_model)
    enc = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return enc.astype(dtype)


def _attention_spec(prefix: str, d: int) -> list[tuple[str, tuple[int, ...], str]]:
    return [(f"{prefix}.{w}", (d, d), "weight") for w in ("wq", "wk", "wv", "wo")]


def _ln_spec(prefix: str, d: int) -> list[tuple[str, tuple[int, ...], str]]:
    return [(f"{prefix}.g", (d,), "ones"), (f"{prefix}.b", (d,), "zeros")]


def _ff_spec(prefix: str, d: int, d_ff: int) -> list[tuple[str, tuple[int, ...], str]]:
    return [
        (f"{prefix}.w1", (d, d_ff), "weight"),
        (f"{prefix}.b1", (d_ff,), "zeros"),
        (f"{prefix}.w2", (d_ff, d), "weight"),
        (f"{prefix}.b2", (d,), "zeros"),
    ]


class _TransformerBase:
    arch: ArchConfig
    params: dict[str, Tensor]

    def freeze(self) -> None:
        """Stop all parameters from collecting gradients (used for the prior
        LM, which stays fixed while the translation model trains)."""
        for p in self.params.values():
            p.requires_grad = False

    def zero_grads(self) -> None:
        ad.zero_grads(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def _positions(self, length: int) -> Tensor:
        return Tensor(sinusoidal_positions(length, self.arch.d_model, self.arch.dtype))

    def _attend(
        self,
        prefix: str,
        x_q: Tensor,
        x_kv: Tensor,
        keep: np.ndarray,
    ) -> Tensor:
        """Multi-head attention; ``keep`` broadcasts to (B, H, Tq, Tk)."""
        p = self.params
        arch = self.arch
        b, tq = x_q.shape[0], x_q.shape[1]
        tk = x_kv.shape[1]
        dh = arch.d_model // arch.n_heads

        def split(x: Tensor, t: int) -> Tensor:
            return ad.transpose(ad.reshape(x, (b, t, arch.n_heads, dh)), (0, 2, 1, 3))

        q = split(ad.matmul(x_q, p[f"{prefix}.wq"]), tq)
        k = split(ad.matmul(x_kv, p[f"{prefix}.wk"]), tk)
        v = split(ad.matmul(x_kv, p[f"{prefix}.wv"]), tk)
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        scores = ad.masked_fill(scores, ~keep, ATTN_MASK_VALUE)
        ctx = ad.matmul(ad.softmax(scores, axis=-1), v)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, tq, arch.d_model))
        return ad.matmul(ctx, p[f"{prefix}.wo"])

    def _feed_forward(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        h = ad.relu(ad.add(ad.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
        return ad.add(ad.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _drop(self, x: Tensor, rng) -> Tensor:
        if rng is None or self.arch.dropout <= 0.0:
            return x
        return ad.dropout(x, self.arch.dropout, rng)

    def _embed(self, name: str, ids: np.ndarray) -> Tensor:
        emb = ad.embedding(self.params[name], ids)
        scaled = ad.mul(emb, math.sqrt(self.arch.d_model))
        return ad.add(scaled, self._positions(ids.shape[1]))

    def _project(self, x: Tensor, emb_name: str) -> Tensor:
        """Tied output projection; the 1/sqrt(d) factor keeps fresh-init
        logits near zero so an untrained model is close to uniform."""
        proj = ad.matmul(x, ad.transpose(self.params[emb_name], (1, 0)))
        return ad.mul(proj, 1.0 / math.sqrt(self.arch.d_model))


def _causal_keep(t: int) -> np.ndarray:
    return np.tril(np.ones((t, t), dtype=bool))[None, None, :, :]


class TransformerLM(_TransformerBase):
    """Decoder-only language model over the target vocabulary."""

    kind = "lm"

    def __init__(
        self,
        vocab_size: int,
        arch: ArchConfig | None = None,
        seed: int = 0,
        params: dict[str, Tensor] | None = None,
    ):
        self.arch = arch or ArchConfig()
        self.vocab_size = vocab_size
        self.params = params if params is not None else init_parameters(
            self._spec(), seed, self.arch.dtype
        )

    def _spec(self):
        d, ff = self.arch.d_model, self.arch.d_ff
        spec = [("emb", (self.vocab_size, d), "weight")]
        for i in range(self.arch.n_layers):
            spec += _ln_spec(f"block{i}.ln1", d)
            spec += _attention_spec(f"block{i}.att", d)
            spec += _ln_spec(f"block{i}.ln2", d)
            spec += _ff_spec(f"block{i}.ff", d, ff)
        spec += _ln_spec("final", d)
        return spec

    def logits(self, ids: np.ndarray, dropout_rng=None) -> Tensor:
        """Next-token logits for every position of ``ids`` (B, T)."""
        ids = np.asarray(ids)
        if ids.max(initial=0) >= self.vocab_size:
            raise ConfigError("token id outside the model vocabulary")
        x = self._drop(self._embed("emb", ids), dropout_rng)
        keep = _causal_keep(ids.shape[1])
        for i in range(self.arch.n_layers):
            h = self._ln(f"block{i}.ln1", x)
            x = ad.add(x, self._drop(self._attend(f"block{i}.att", h, h, keep), dropout_rng))
            f = self._feed_forward(f"block{i}.ff", self._ln(f"block{i}.ln2", x))
            x = ad.add(x, self._drop(f, dropout_rng))
        x = self._ln("final", x)
        return self._project(x, "emb")


class TransformerTranslator(_TransformerBase):
    """Encoder-decoder translation model. The decoder's embedding and output
    projection share storage ("tgt_emb")."""

    kind = "tm"

    def __init__(
        self,
        src_vocab_size: int,
        tgt_vocab_size: int,
        arch: ArchConfig | None = None,
        seed: int = 0,
        params: dict[str, Tensor] | None = None,
    ):
        self.arch = arch or ArchConfig()
        self.src_vocab_size = src_vocab_size
        self.tgt_vocab_size = tgt_vocab_size
        self.params = params if params is not None else init_parameters(
            self._spec(), seed, self.arch.dtype
        )

    def _spec(self):
        d, ff = self.arch.d_model, self.arch.d_ff
        spec = [
            ("src_emb", (self.src_vocab_size, d), "weight"),
            ("tgt_emb", (self.tgt_vocab_size, d), "weight"),
        ]
        for i in range(self.arch.n_layers):
            spec += _ln_spec(f"enc{i}.ln1", d)
            spec += _attention_spec(f"enc{i}.att", d)
            spec += _ln_spec(f"enc{i}.ln2", d)
            spec += _ff_spec(f"enc{i}.ff", d, ff)
        spec += _ln_spec("enc_final", d)
        for i in range(self.arch.n_layers):
            spec += _ln_spec(f"dec{i}.ln1", d)
            spec += _attention_spec(f"dec{i}.self", d)
            spec += _ln_spec(f"dec{i}.ln2", d)
            spec += _attention_spec(f"dec{i}.cross", d)
            spec += _ln_spec(f"dec{i}.ln3", d)
            spec += _ff_spec(f"dec{i}.ff", d, ff)
        spec += _ln_spec("dec_final", d)
        return spec

    def encode(self, src_ids: np.ndarray, src_mask: np.ndarray, dropout_rng=None) -> Tensor:
        src_ids = np.asarray(src_ids)
        if src_ids.ndim != 2 or src_ids.shape[1] == 0:
            raise InvalidInputError("source batch must be (B, S) with S >= 1")
        if src_ids.max(initial=0) >= self.src_vocab_size:
            raise ConfigError("source token id outside the model vocabulary")
        keep = np.asarray(src_mask, dtype=bool)[:, None, None, :]
        x = self._drop(self._embed("src_emb", src_ids), dropout_rng)
        for i in range(self.arch.n_layers):
            h = self._ln(f"enc{i}.ln1", x)
            x = ad.add(x, self._drop(self._attend(f"enc{i}.att", h, h, keep), dropout_rng))
            f = self._feed_forward(f"enc{i}.ff", self._ln(f"enc{i}.ln2", x))
            x = ad.add(x, self._drop(f, dropout_rng))
        return self._ln("enc_final", x)

    def decoder_logits(
        self,
        memory: Tensor,
        src_mask: np.ndarray,
        tgt_in: np.ndarray,
        dropout_rng=None,
    ) -> Tensor:
        tgt_in = np.asarray(tgt_in)
        if tgt_in.max(initial=0) >= self.tgt_vocab_size:
            raise ConfigError("target token id outside the model vocabulary")
        causal = _causal_keep(tgt_in.shape[1])
        cross_keep = np.asarray(src_mask, dtype=bool)[:, None, None, :]
        x = self._drop(self._embed("tgt_emb", tgt_in), dropout_rng)
        for i in range(self.arch.n_layers):
            h = self._ln(f"dec{i}.ln1", x)
            x = ad.add(x, self._drop(self._attend(f"dec{i}.self", h, h, causal), dropout_rng))
            h = self._ln(f"dec{i}.ln2", x)
            x = ad.add(x, self._drop(self._attend(f"dec{i}.cross", h, memory, cross_keep), dropout_rng))
            f = self._feed_forward(f"dec{i}.ff", self._ln(f"dec{i}.ln3", x))
            x = ad.add(x, self._drop(f, dropout_rng))
        x = self._ln("dec_final", x)
        return self._project(x, "tgt_emb")

    def logits(
        self,
        src_ids: np.ndarray,
        src_mask: np.ndarray,
        tgt_in: np.ndarray,
        dropout_rng=None,
    ) -> Tensor:
        memory = self.encode(src_ids, src_mask, dropout_rng)
        return self.decoder_logits(memory, src_mask, tgt_in, dropout_rng)


def lm_step_distributions(lm: TransformerLM, tgt_ids: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Teacher-forced LM distributions: row t predicts tgt_ids[:, t+1].

    Returns probabilities of shape (B, T-1, K); no gradients are recorded.
    """
    with ad.no_grad():
        logits = lm.logits(np.asarray(tgt_ids)[:, :-1])
    return softmax_array(logits.data, tau)


def tm_step_distributions(tm, batch, tau: float = 1.0) -> np.ndarray:
    """Teacher-forced TM distributions aligned with lm_step_distributions."""
    with ad.no_grad():
        logits = tm.logits(batch.src_ids, batch.src_mask, batch.tgt_ids[:, :-1])
    return softmax_array(logits.data, tau)
