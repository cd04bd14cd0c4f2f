"""Discretization bottlenecks.

Two ways to squeeze a dense vector ``w`` through a discrete code:

* :class:`SemanticHashing` projects ``w`` to ``b`` logits, adds Gaussian noise
  while training, and mixes a saturating-sigmoid relaxation with hard bits
  whose gradient is routed to the relaxation. A 3-layer network maps the
  (relaxed or hard) bits back to ``hidden_size``.
* :class:`GumbelSoftmax` projects ``w`` to logits over ``num_symbols`` and
  uses a tempered Gumbel-Softmax mixture of embedding rows while training,
  the argmax row at inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndgrad as G
from .ndgrad import ConfigError, DiffArray, DimensionError, ParamStore, RngState
from .ndgrad.core import as_array

POLARITIES = ("positive_is_one", "negative_is_one")


@dataclass
class SemhashConfig:
    bits: int = 16
    noise_sigma: float = 1.0
    mix_probability: float = 0.5
    filter_size: int = 4096
    hidden_size: int = 512
    bit_polarity: str = "positive_is_one"

    def validate(self) -> None:
        if not 1 <= self.bits <= 24:
            raise ConfigError(f"semhash bits must be in [1, 24], got {self.bits}")
        if not 0.0 <= self.mix_probability <= 1.0:
            raise ConfigError(f"mix_probability must be in [0, 1], got {self.mix_probability}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.bit_polarity not in POLARITIES:
            raise ConfigError(f"bit_polarity must be one of {POLARITIES}, got {self.bit_polarity!r}")

    @property
    def num_symbols(self) -> int:
        return 2**self.bits


@dataclass
class GumbelConfig:
    num_symbols: int = 2**16
    hidden_size: int = 512
    tau_start: float = 1.0
    tau_end: float = 0.1
    tau_decay_steps: int = 10000
    variance_penalty_weight: float = 0.0

    def validate(self) -> None:
        if self.num_symbols < 2:
            raise ConfigError(f"num_symbols must be >= 2, got {self.num_symbols}")
        if not (self.tau_start >= self.tau_end > 0):
            raise ConfigError(f"need tau_start >= tau_end > 0, got {self.tau_start}, {self.tau_end}")
        if self.variance_penalty_weight < 0:
            raise ConfigError("variance_penalty_weight must be nonnegative")

    @property
    def bits(self) -> int:
        return int(math.ceil(math.log2(self.num_symbols)))


# ----------------------------------------------------------------- codes


def pack_bits(bits) -> np.ndarray:
    """Pack ``{0,1}`` vectors (last axis) into integers; bit ``i`` has weight ``2**i``."""
    bits = np.asarray(bits)
    b = bits.shape[-1]
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("pack_bits: entries must be 0 or 1")
    weights = (1 << np.arange(b, dtype=np.int64))
    return (bits.astype(np.int64) * weights).sum(axis=-1)


def unpack_ids(ids, bits: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if np.any(ids < 0) or np.any(ids >= (1 << bits)):
        raise ValueError(f"unpack_ids: ids must lie in [0, {1 << bits}), got range "
                         f"[{ids.min() if ids.size else 0}, {ids.max() if ids.size else 0}]")
    return ((ids[..., None] >> np.arange(bits, dtype=np.int64)) & 1).astype(np.uint8)


@dataclass
class DiscreteCode:
    """Per-position bit vectors and their packed ids (``bits`` may be None for Gumbel)."""

    ids: np.ndarray
    bits: np.ndarray | None = None
    num_bits: int = 0

    @classmethod
    def from_bits(cls, bits) -> "DiscreteCode":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(ids=pack_bits(bits), bits=bits, num_bits=bits.shape[-1])

    @classmethod
    def from_ids(cls, ids, num_bits: int) -> "DiscreteCode":
        return cls(ids=np.asarray(ids, dtype=np.int64), bits=unpack_ids(ids, num_bits), num_bits=num_bits)

    def __len__(self) -> int:
        return self.ids.shape[-1]


# ---------------------------------------------------------- semantic hashing


def hard_bits(vn: np.ndarray, polarity: str) -> np.ndarray:
    if polarity == "positive_is_one":
        return (vn > 0).astype(np.float32)
    return (vn < 0).astype(np.float32)


def semhash_forward(
    v: DiffArray,
    train: bool,
    cfg: SemhashConfig,
    rng: RngState | None = None,
    mix_dense: np.ndarray | None = None,
) -> tuple[DiffArray, DiscreteCode]:
    """Discretize ``v`` (last axis = bits).

    In eval mode the result is the hard bit vector. In train mode noise is
    added and, independently per position, either the saturating-sigmoid
    relaxation is used (probability ``mix_probability``) or the hard bits
    with gradients redirected to the relaxation. ``mix_dense`` forces that
    per-position choice (boolean, shape ``v.shape[:-1]``).
    """
    if v.shape[-1] != cfg.bits:
        raise DimensionError(f"semhash_forward: trailing dim {v.shape[-1]} != bits {cfg.bits}")
    if not train:
        bits = hard_bits(v.value, cfg.bit_polarity)
        return DiffArray(bits), DiscreteCode.from_bits(bits)
    if rng is None:
        raise ConfigError("semhash_forward: train mode requires an rng")
    vn = G.add(v, G.gaussian_noise(v.shape, cfg.noise_sigma, rng))
    v1 = G.saturating_sigmoid(vn)
    bits = hard_bits(vn.value, cfg.bit_polarity)
    v2 = G.gradient_redirect(DiffArray(bits), v1)
    if mix_dense is None:
        mix_dense = rng.bernoulli(cfg.mix_probability, v.shape[:-1])
    dense = G.where(np.asarray(mix_dense, dtype=bool)[..., None], v1, v2)
    return dense, DiscreteCode.from_bits(bits)


class SemanticHashing:
    def __init__(self, store: ParamStore, cfg: SemhashConfig):
        cfg.validate()
        self.cfg = cfg
        self.project = G.Dense(store, "project", cfg.hidden_size, cfg.bits)
        self.h1a = G.Dense(store, "h1a", cfg.bits, cfg.filter_size)
        self.h1b = G.Dense(store, "h1b", cfg.bits, cfg.filter_size)
        self.h2 = G.Dense(store, "h2", cfg.filter_size, cfg.filter_size)
        self.out = G.Dense(store, "out", cfg.filter_size, cfg.hidden_size)

    @property
    def num_symbols(self) -> int:
        return self.cfg.num_symbols

    def project_to_bits(self, w: DiffArray) -> DiffArray:
        if w.shape[-1] != self.cfg.hidden_size:
            raise DimensionError(f"project_to_bits: trailing dim {w.shape[-1]} != hidden {self.cfg.hidden_size}")
        return self.project(w)

    def decode(self, dense_code) -> DiffArray:
        """Map (relaxed) bits back to ``hidden_size``."""
        dense_code = as_array(dense_code)
        if dense_code.shape[-1] != self.cfg.bits:
            raise DimensionError(f"bit_decode_network: trailing dim {dense_code.shape[-1]} != bits {self.cfg.bits}")
        h1a = self.h1a(dense_code)
        h1b = self.h1b(G.sub(1.0, dense_code))
        h2 = self.h2(G.relu(G.add(h1a, h1b)))
        return self.out(G.relu(h2))

    def embed_ids(self, ids) -> DiffArray:
        """Dense vectors for given code ids (what the eval path produces)."""
        return self.decode(DiffArray(unpack_ids(ids, self.cfg.bits).astype(np.float32)))

    def __call__(self, w: DiffArray, train: bool, rng: RngState | None = None, step: int = 0):
        """Returns ``(b(w), code, aux_loss)``; semantic hashing has no auxiliary loss."""
        dense, code = semhash_forward(self.project_to_bits(w), train, self.cfg, rng)
        return self.decode(dense), code, None


# ------------------------------------------------------------ gumbel-softmax


def gumbel_temperature(cfg: GumbelConfig, step: int) -> float:
    """Exponential interpolation from ``tau_start`` to ``tau_end``."""
    if cfg.tau_decay_steps <= 0:
        return cfg.tau_end
    frac = min(max(step, 0) / cfg.tau_decay_steps, 1.0)
    return cfg.tau_start * (cfg.tau_end / cfg.tau_start) ** frac


def usage_variance_penalty(y_rows: DiffArray, weight: float, mask: np.ndarray | None = None) -> DiffArray:
    """``weight`` times the negative entropy of the mean of ``y_rows``.

    Minimized when symbols are used uniformly across the batch (value
    ``-weight * ln(V)``), maximal (zero) when every row picks the same one.
    """
    v = y_rows.shape[-1]
    rows = G.reshape(y_rows, (-1, v))
    if rows.shape[0] < 1:
        raise ValueError("usage_variance_penalty: need at least one row")
    if mask is None:
        ybar = G.mean(rows, axis=0)
    else:
        w = np.asarray(mask, dtype=np.float32).reshape(-1, 1)
        ybar = G.div(G.sum(G.mul(rows, w), axis=0), max(float(w.sum()), 1.0))
    neg_entropy = G.sum(G.mul(ybar, G.log(G.add(ybar, 1e-12))))
    return G.mul(neg_entropy, weight)


def gumbel_forward(
    logits: DiffArray,
    embedding: DiffArray,
    train: bool,
    tau: float,
    rng: RngState | None = None,
    noise: np.ndarray | None = None,
) -> tuple[DiffArray, np.ndarray, DiffArray | None]:
    """Returns ``(dense_code, ids, y)``; ``y`` is None in eval mode.

    ``noise`` overrides the Gumbel sample (zeros give the noiseless softmax).
    """
    if tau <= 0:
        raise ConfigError(f"gumbel temperature must be > 0, got {tau}")
    if not train:
        ids = np.argmax(logits.value, axis=-1)
        return G.take(embedding, ids), ids, None
    if noise is None:
        if rng is None:
            raise ConfigError("gumbel_forward: train mode requires an rng")
        noise = rng.gumbel(logits.shape)
    x = G.log_softmax(logits)
    y = G.softmax(G.mul(G.add(x, noise), 1.0 / tau))
    ids = np.argmax(y.value, axis=-1)
    return G.matmul(y, embedding), ids, y


class GumbelSoftmax:
    def __init__(self, store: ParamStore, cfg: GumbelConfig):
        cfg.validate()
        self.cfg = cfg
        self.project = G.Dense(store, "logits", cfg.hidden_size, cfg.num_symbols)
        self.embedding = store.matrix("embedding", cfg.num_symbols, cfg.hidden_size)

    @property
    def num_symbols(self) -> int:
        return self.cfg.num_symbols

    def embed_ids(self, ids) -> DiffArray:
        ids = np.asarray(ids, dtype=np.int64)
        if np.any(ids < 0) or np.any(ids >= self.cfg.num_symbols):
            raise ValueError(f"latent ids must lie in [0, {self.cfg.num_symbols})")
        return G.take(self.embedding, ids)

    def __call__(self, w: DiffArray, train: bool, rng: RngState | None = None, step: int = 0,
                 mask: np.ndarray | None = None):
        tau = gumbel_temperature(self.cfg, step)
        dense, ids, y = gumbel_forward(self.project(w), self.embedding, train, tau, rng)
        aux = None
        if y is not None and self.cfg.variance_penalty_weight > 0:
            aux = usage_variance_penalty(y, self.cfg.variance_penalty_weight, mask)
        return dense, DiscreteCode(ids=ids, num_bits=self.cfg.bits), aux


def make_bottleneck(store: ParamStore, cfg):
    if isinstance(cfg, SemhashConfig):
        return SemanticHashing(store, cfg)
    if isinstance(cfg, GumbelConfig):
        return GumbelSoftmax(store, cfg)
    raise ConfigError(f"unknown bottleneck config {type(cfg).__name__}")
