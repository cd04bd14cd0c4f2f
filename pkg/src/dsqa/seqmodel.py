"""Decoder-only Transformer and the latent-prefixed (autoencoder-augmented) model.

Main-model input layout, left to right::

    [source tokens, BOUNDARY]   (conditional task only)
    reversed latent vectors
    separator '#'
    s_1 ... s_N

The separator position predicts ``s_1`` and ``s_i`` predicts ``s_{i+1}``.
The latent predictor is a second Transformer with disjoint parameters that
models the latent id sequence in natural order after a learned start vector
(again optionally after the source prefix).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ndgrad as G
from .compressor import Compressor, CompressorConfig, latent_mask
from .data import BOUNDARY_ID, SequenceBatch
from .ndgrad import ConfigError, DiffArray, ParamStore, RngState

NEG_INF = np.float32(-1e9)


class CapacityError(ValueError):
    """A sequence does not fit the model's ``max_len``."""


@dataclass
class TransformerConfig:
    num_layers: int = 6
    hidden_size: int = 512
    filter_size: int = 4096
    num_heads: int = 8
    vocab_size: int = 32000
    max_len: int = 256
    dropout: float = 0.1

    def validate(self) -> None:
        if self.hidden_size % self.num_heads:
            raise ConfigError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if min(self.num_layers, self.hidden_size, self.filter_size, self.vocab_size, self.max_len) < 1:
            raise ConfigError("transformer sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def paper(cls, vocab_size: int = 32000) -> "TransformerConfig":
        return cls(6, 512, 4096, 8, vocab_size)

    @classmethod
    def small(cls, vocab_size: int = 32000) -> "TransformerConfig":
        return cls(3, 384, 2048, 6, vocab_size)


class Transformer:
    """Pre-norm causal Transformer stack over already-embedded inputs."""

    def __init__(self, store: ParamStore, cfg: TransformerConfig, out_vocab: int | None = None):
        cfg.validate()
        self.cfg = cfg
        h, f = cfg.hidden_size, cfg.filter_size
        self.embedding = store.matrix("embedding", cfg.vocab_size, h)
        self.layers = []
        for i in range(cfg.num_layers):
            s = store.scope(f"layer{i}")
            self.layers.append({
                "ln1": G.LayerNorm(s, "ln1", h),
                "qkv": G.Dense(s, "qkv", h, 3 * h),
                "proj": G.Dense(s, "proj", h, h),
                "ln2": G.LayerNorm(s, "ln2", h),
                "ff1": G.Dense(s, "ff1", h, f),
                "ff2": G.Dense(s, "ff2", f, h),
            })
        self.final_norm = G.LayerNorm(store, "final_norm", h)
        self.output = G.Dense(store, "output", h, out_vocab or cfg.vocab_size)
        self._pos_cache = G.sinusoidal_positions(cfg.max_len, h)

    def embed(self, ids) -> DiffArray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise ConfigError(f"token id out of range for vocab_size {self.cfg.vocab_size}")
        return G.mul(G.take(self.embedding, ids), math.sqrt(self.cfg.hidden_size))

    def _attention(self, layer, x, bias, train, rng):
        b, t, h = x.shape
        nh = self.cfg.num_heads
        dh = h // nh
        qkv = G.reshape(layer["qkv"](x), (b, t, 3, nh, dh))
        qkv = G.transpose(qkv, (2, 0, 3, 1, 4))  # [3, b, nh, t, dh]
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = G.add(G.mul(G.matmul(q, G.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh)), bias)
        probs = G.dropout(G.softmax(scores), self.cfg.dropout, rng, train)
        ctx = G.reshape(G.transpose(G.matmul(probs, v), (0, 2, 1, 3)), (b, t, h))
        return layer["proj"](ctx)

    def __call__(
        self,
        x: DiffArray,
        key_mask: np.ndarray | None = None,
        train: bool = False,
        rng: RngState | None = None,
        position_offset: int = 0,
    ) -> DiffArray:
        """``x`` is ``[batch, length, hidden]``; returns logits ``[batch, length, out_vocab]``."""
        b, t, _ = x.shape
        if position_offset + t > self.cfg.max_len:
            raise CapacityError(f"sequence length {position_offset + t} exceeds max_len {self.cfg.max_len}")
        allowed = np.tril(np.ones((t, t), dtype=bool))[None, None]
        if key_mask is not None:
            allowed = allowed & (np.asarray(key_mask) > 0)[:, None, None, :]
        bias = np.where(allowed, np.float32(0), NEG_INF).astype(np.float32)
        x = G.add(x, self._pos_cache[position_offset : position_offset + t])
        x = G.dropout(x, self.cfg.dropout, rng, train)
        for layer in self.layers:
            a = self._attention(layer, layer["ln1"](x), bias, train, rng)
            x = G.add(x, G.dropout(a, self.cfg.dropout, rng, train))
            f = layer["ff2"](G.relu(layer["ff1"](layer["ln2"](x))))
            x = G.add(x, G.dropout(f, self.cfg.dropout, rng, train))
        return self.output(self.final_norm(x))


# ----------------------------------------------------------- augmented model


@dataclass
class ModelConfig:
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    compressor: CompressorConfig = field(default_factory=CompressorConfig)
    use_latent: bool = True
    conditional: bool = False
    sequence_loss_weight: float = 1.0
    latent_loss_weight: float = 1.0
    zero_latent: bool = False

    def validate(self) -> None:
        self.transformer.validate()
        if self.use_latent:
            if self.compressor.hidden_size != self.transformer.hidden_size:
                raise ConfigError("compressor and transformer hidden sizes must match")
            self.compressor.validate()


@dataclass
class Prefix:
    """Embedded context preceding ``s``; the last prefix position is the separator."""

    embeddings: DiffArray
    key_mask: np.ndarray

    @property
    def length(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class AugmentedInput:
    embeddings: DiffArray
    key_mask: np.ndarray
    latent_positions: np.ndarray
    separator_position: int
    s_positions: np.ndarray
    loss_mask: np.ndarray  # over prediction slots, 1 where a real s token is predicted


def build_augmented_input(latent_dense: DiffArray | None, s_embedded: DiffArray, separator: DiffArray,
                          s_mask: np.ndarray | None = None) -> AugmentedInput:
    """``reverse(latent) ∘ # ∘ s`` for a batch ``[B, m, h]`` / ``[B, N, h]``."""
    b, n, h = s_embedded.shape
    sep = G.reshape(G.mul(G.reshape(separator, (1, 1, h)), np.ones((b, 1, 1), np.float32)), (b, 1, h))
    parts = []
    m = 0
    if latent_dense is not None:
        m = latent_dense.shape[1]
        if m == 0:
            raise ValueError("build_augmented_input: latent sequence is empty")
        parts.append(latent_dense[:, ::-1])
    parts += [sep, s_embedded]
    emb = G.concat(parts, axis=1)
    s_mask = np.ones((b, n), np.float32) if s_mask is None else np.asarray(s_mask, np.float32)
    key_mask = np.concatenate([np.ones((b, m + 1), np.float32), s_mask], axis=1)
    return AugmentedInput(
        embeddings=emb,
        key_mask=key_mask,
        latent_positions=np.arange(m),
        separator_position=m,
        s_positions=np.arange(m + 1, m + 1 + n),
        loss_mask=s_mask,
    )


def conditional_layout_length(source_len: int, latent_len: int, target_len: int) -> int:
    """Length of ``source ∘ BOUNDARY ∘ reversed latent ∘ # ∘ target``."""
    return source_len + 1 + latent_len + 1 + target_len


class AugmentedModel:
    """Parameters and forward passes for the baseline or latent-augmented model."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.store = ParamStore(RngState(seed))
        tcfg = cfg.transformer
        self.main = Transformer(self.store.scope("main"), tcfg)
        self.separator = self.store.scope("main").matrix("separator", 1, tcfg.hidden_size)
        self.compressor = None
        self.latent_predictor = None
        if cfg.use_latent:
            cstore = self.store.scope("compressor")
            self.compressor_embedding = cstore.matrix("embedding", tcfg.vocab_size, tcfg.hidden_size)
            self.compressor = Compressor(cstore, cfg.compressor)
            lstore = self.store.scope("latent_predictor")
            lcfg = TransformerConfig(**{**tcfg.__dict__})
            self.latent_predictor = Transformer(lstore, lcfg, out_vocab=self.num_latent_symbols)
            self.latent_embedding = lstore.matrix("latent_embedding", self.num_latent_symbols, tcfg.hidden_size)
            self.latent_start = lstore.matrix("start", 1, tcfg.hidden_size)
        self.step = 0

    # ------------------------------------------------------------ metadata

    @property
    def params(self) -> list:
        return list(self.store)

    @property
    def num_latent_symbols(self) -> int:
        c = self.cfg.compressor.bottleneck
        return c.num_symbols

    @property
    def K(self) -> int:  # noqa: N802
        return self.cfg.compressor.K

    def in_bypass(self, step: int | None = None) -> bool:
        if not self.cfg.use_latent:
            return False
        return self.compressor.in_bypass(self.step if step is None else step)

    def latent_length(self, n: int) -> int:
        return -(-n // self.K)

    # -------------------------------------------------------------- prefixes

    def _broadcast_vec(self, vec: DiffArray, b: int) -> DiffArray:
        h = vec.shape[-1]
        return G.mul(G.reshape(vec, (1, 1, h)), np.ones((b, 1, 1), np.float32))

    def _source_prefix(self, model: Transformer, source_ids, source_mask):
        source_ids = np.asarray(source_ids, dtype=np.int64)
        b = source_ids.shape[0]
        bound = np.full((b, 1), BOUNDARY_ID, dtype=np.int64)
        emb = model.embed(np.concatenate([source_ids, bound], axis=1))
        smask = np.ones(source_ids.shape, np.float32) if source_mask is None else np.asarray(source_mask, np.float32)
        return emb, np.concatenate([smask, np.ones((b, 1), np.float32)], axis=1)

    def main_prefix(self, latent_dense: DiffArray | None, batch_size: int, source_ids=None,
                    source_mask=None) -> Prefix:
        parts, masks = [], []
        if source_ids is not None:
            emb, mask = self._source_prefix(self.main, source_ids, source_mask)
            parts.append(emb)
            masks.append(mask)
        if latent_dense is not None:
            if self.cfg.zero_latent:
                latent_dense = DiffArray(np.zeros(latent_dense.shape, np.float32))
            parts.append(latent_dense[:, ::-1])
            masks.append(np.ones(latent_dense.shape[:2], np.float32))
        parts.append(self._broadcast_vec(self.separator, batch_size))
        masks.append(np.ones((batch_size, 1), np.float32))
        emb = parts[0] if len(parts) == 1 else G.concat(parts, axis=1)
        return Prefix(emb, np.concatenate(masks, axis=1))

    def latent_prefix(self, batch_size: int, source_ids=None, source_mask=None) -> Prefix:
        parts, masks = [], []
        if source_ids is not None:
            emb, mask = self._source_prefix(self.latent_predictor, source_ids, source_mask)
            parts.append(emb)
            masks.append(mask)
        parts.append(self._broadcast_vec(self.latent_start, batch_size))
        masks.append(np.ones((batch_size, 1), np.float32))
        emb = parts[0] if len(parts) == 1 else G.concat(parts, axis=1)
        return Prefix(emb, np.concatenate(masks, axis=1))

    # --------------------------------------------------------------- logits

    def _continue(self, model, prefix: Prefix, tail: DiffArray | None, tail_mask, train, rng):
        if tail is None or tail.shape[1] == 0:
            x, mask = prefix.embeddings, prefix.key_mask
        else:
            x = G.concat([prefix.embeddings, tail], axis=1)
            mask = np.concatenate([prefix.key_mask, tail_mask], axis=1)
        logits = model(x, mask, train=train, rng=rng)
        return logits[:, prefix.length - 1 :]

    def main_logits(self, prefix: Prefix, s_ids, s_mask=None, train=False, rng=None) -> DiffArray:
        """Logits ``[B, n+1, V]``: slot ``i`` predicts ``s_{i+1}`` given ``s_{<=i}``."""
        s_ids = np.asarray(s_ids, dtype=np.int64)
        s_mask = np.ones(s_ids.shape, np.float32) if s_mask is None else s_mask
        tail = self.main.embed(s_ids) if s_ids.shape[1] else None
        return self._continue(self.main, prefix, tail, s_mask, train, rng)

    def latent_logits(self, prefix: Prefix, latent_ids, train=False, rng=None) -> DiffArray:
        latent_ids = np.asarray(latent_ids, dtype=np.int64)
        tail = G.take(self.latent_embedding, latent_ids) if latent_ids.shape[1] else None
        return self._continue(self.latent_predictor, prefix, tail, np.ones(latent_ids.shape, np.float32), train, rng)

    def latent_dense_from_ids(self, ids) -> DiffArray:
        """Main-model prefix vectors for given latent ids (eval-path embedding)."""
        return self.compressor.embed_ids(ids)

    # ------------------------------------------------------------- training

    def compress(self, batch: SequenceBatch, train: bool, step: int, rng: RngState | None):
        s_emb = G.mul(G.take(self.compressor_embedding, batch.token_ids), math.sqrt(self.cfg.transformer.hidden_size))
        return self.compressor(s_emb, train, step, rng, token_mask=batch.mask)

    def forward(self, batch: SequenceBatch, train: bool = True, step: int | None = None,
                rng: RngState | None = None) -> dict:
        """Losses for one batch.

        Returns ``sequence_nll`` (nats/token over s), ``latent_nll`` (nats per
        latent symbol, 0 in bypass or baseline), ``total_loss`` and the code.
        """
        step = self.step if step is None else step
        ids = np.asarray(batch.token_ids, dtype=np.int64)
        if ids.size and ids.max() >= self.cfg.transformer.vocab_size:
            raise ConfigError("batch contains ids outside the model vocabulary")
        b, n = ids.shape
        if self.cfg.conditional and batch.source_ids is None:
            raise ConfigError("conditional model needs source_ids in the batch")
        src = batch.source_ids if self.cfg.conditional else None
        latent_dense, code, aux = None, None, None
        if self.cfg.use_latent:
            comp = self.compress(batch, train, step, rng)
            latent_dense, code, aux = comp.dense_latent, comp.latent, comp.aux_loss
        prefix = self.main_prefix(latent_dense, b, src, batch.source_mask)
        logits = self.main_logits(prefix, ids[:, :-1], batch.mask[:, :-1], train, rng)
        seq_nll = G.cross_entropy(logits, ids, batch.mask)
        total = G.mul(seq_nll, self.cfg.sequence_loss_weight)
        lat_nll = None
        if code is not None:
            lmask = latent_mask(batch.mask, self.K)
            lprefix = self.latent_prefix(b, src, batch.source_mask)
            llogits = self.latent_logits(lprefix, code.ids[:, :-1], train, rng)
            lat_nll = G.cross_entropy(llogits, code.ids, lmask)
            total = G.add(total, G.mul(lat_nll, self.cfg.latent_loss_weight))
        if aux is not None:
            total = G.add(total, aux)
        return {
            "sequence_nll": seq_nll,
            "latent_nll": lat_nll,
            "total_loss": total,
            "code": code,
            "num_tokens": float(batch.mask.sum()),
        }
