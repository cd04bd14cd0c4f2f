"""Inference-time generation over frozen parameters.

Searches are written against a *scorer*: a callable mapping a batch of
partial sequences ``[H, t]`` (int ids) to next-token log-probabilities
``[H, V]``. :class:`MainScorer` and :class:`LatentScorer` adapt the two
Transformers of an :class:`~dsqa.seqmodel.AugmentedModel`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ndgrad as G
from .data import EOS_ID
from .ndgrad import ConfigError, DiffArray, RngState, StateError
from .ndgrad.ops import _log_softmax_np
from .seqmodel import AugmentedModel, Prefix

Scorer = Callable[[np.ndarray], np.ndarray]


@dataclass
class BeamConfig:
    width: int = 4
    max_steps: int = 64
    length_normalization_alpha: float = 0.0
    eos_id: int | None = EOS_ID

    def validate(self) -> None:
        if self.width < 1 or self.max_steps < 1:
            raise ConfigError("beam width and max_steps must be >= 1")


@dataclass
class MixedDecodeConfig:
    latent_temperature: float = 1.0
    num_samples: int = 10
    seed: int = 1
    beam: BeamConfig = field(default_factory=BeamConfig)

    def validate(self) -> None:
        if self.latent_temperature <= 0:
            raise ConfigError("latent_temperature must be > 0")
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        self.beam.validate()


# ------------------------------------------------------------------ scorers


def _repeat_prefix(prefix: Prefix, n: int) -> Prefix:
    emb = prefix.embeddings.value
    if emb.shape[0] != 1:
        raise ValueError("decoding expects a single-example prefix")
    return Prefix(DiffArray(np.repeat(emb, n, axis=0)), np.repeat(prefix.key_mask, n, axis=0))


class MainScorer:
    """Next-token log-probs of the main model after a fixed prefix."""

    def __init__(self, model: AugmentedModel, prefix: Prefix):
        self.model = model
        self.prefix = prefix

    @property
    def max_new(self) -> int:
        return self.model.cfg.transformer.max_len - self.prefix.length

    def __call__(self, ids: np.ndarray) -> np.ndarray:
        pre = _repeat_prefix(self.prefix, ids.shape[0])
        logits = self.model.main_logits(pre, ids)
        return _log_softmax_np(logits.value[:, -1].astype(np.float64), -1)


class LatentScorer:
    def __init__(self, model: AugmentedModel, prefix: Prefix):
        self.model = model
        self.prefix = prefix

    def __call__(self, ids: np.ndarray) -> np.ndarray:
        pre = _repeat_prefix(self.prefix, ids.shape[0])
        logits = self.model.latent_logits(pre, ids)
        return _log_softmax_np(logits.value[:, -1].astype(np.float64), -1)


# ---------------------------------------------------------------- searches


def _normalized(score: float, length: int, alpha: float) -> float:
    if alpha == 0:
        return score
    return score / (((5.0 + length) / 6.0) ** alpha)


def greedy_decode(scorer: Scorer, max_steps: int, eos_id: int | None = EOS_ID) -> tuple[list[int], float]:
    tokens: list[int] = []
    total = 0.0
    for _ in range(max_steps):
        lp = scorer(np.array([tokens], dtype=np.int64))[0]
        t = int(np.argmax(lp))
        total += float(lp[t])
        tokens.append(t)
        if eos_id is not None and t == eos_id:
            break
    return tokens, total


def beam_search(scorer: Scorer, cfg: BeamConfig) -> tuple[list[int], float]:
    """Best completed hypothesis and its cumulative log-probability.

    Hypotheses finish on ``eos_id`` (included in the output) or after
    ``max_steps`` tokens. Ties are broken towards lower token ids so that
    width 1 reproduces greedy decoding exactly.
    """
    cfg.validate()
    alpha = cfg.length_normalization_alpha
    alive: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[list[int], float]] = []
    for step in range(cfg.max_steps):
        ids = np.array([h for h, _ in alive], dtype=np.int64).reshape(len(alive), step)
        lp = scorer(ids)
        vocab = lp.shape[1]
        if step == 0 and cfg.width > vocab:
            warnings.warn(f"beam width {cfg.width} exceeds vocabulary size {vocab}; clipping at step 1",
                          stacklevel=2)
        scores = np.array([s for _, s in alive])[:, None] + lp
        flat = scores.ravel()
        order = np.argsort(-flat, kind="stable")[: cfg.width]
        new_alive = []
        for j in order:
            h, tok = divmod(int(j), vocab)
            seq = alive[h][0] + [tok]
            if cfg.eos_id is not None and tok == cfg.eos_id:
                finished.append((seq, float(flat[j])))
            else:
                new_alive.append((seq, float(flat[j])))
        alive = new_alive
        if not alive:
            break
        if alpha == 0 and finished and max(s for _, s in finished) >= alive[0][1]:
            # Unnormalized scores only decrease as hypotheses grow.
            break
    finished.extend(alive)
    best = max(finished, key=lambda hs: _normalized(hs[1], len(hs[0]), alpha))
    return best[0], best[1]


def sample_tokens(scorer: Scorer, temperature: float, max_steps: int, rng: RngState,
                  eos_id: int | None = EOS_ID) -> tuple[list[int], float]:
    """Autoregressive multinomial draws from ``softmax(logits / temperature)``.

    Returns the tokens and their log-probability under the untempered model.
    """
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    tokens: list[int] = []
    total = 0.0
    for _ in range(max_steps):
        lp = scorer(np.array([tokens], dtype=np.int64))[0]
        probs = np.exp(_log_softmax_np(lp / temperature, -1))
        t = int(rng.categorical(probs))
        total += float(lp[t])
        tokens.append(t)
        if eos_id is not None and t == eos_id:
            break
    return tokens, total


# ------------------------------------------------------------ model-level


@dataclass
class MixedSample:
    latent_ids: list[int]
    tokens: list[int]
    log_prob: float
    latent_log_prob: float


def _require_latent(model: AugmentedModel) -> None:
    if not model.cfg.use_latent:
        raise StateError("model has no latent code (baseline model)")
    if model.in_bypass():
        raise StateError(f"model is still in the bypass phase (step {model.step} < "
                         f"{model.cfg.compressor.pretrain_steps}); no discrete code exists")


def _source_arrays(source: Sequence[int] | None):
    if source is None:
        return None, None
    src = np.asarray([list(source)], dtype=np.int64)
    return src, np.ones(src.shape, np.float32)


def default_latent_length(model: AugmentedModel, source: Sequence[int] | None, latent_length: int | None) -> int:
    if latent_length is not None:
        return latent_length
    if source is None:
        raise ConfigError("unconditional decoding needs an explicit latent length")
    # Target length matches the source in the transduction task; +1 for EOS.
    return model.latent_length(len(source) + 1)


def decode_with_latent(model: AugmentedModel, latent_ids: Sequence[int], cfg: BeamConfig,
                       source: Sequence[int] | None = None) -> tuple[list[int], float]:
    ids = np.asarray([list(latent_ids)], dtype=np.int64)
    src, smask = _source_arrays(source)
    prefix = model.main_prefix(model.latent_dense_from_ids(ids), 1, src, smask)
    scorer = MainScorer(model, prefix)
    steps = min(cfg.max_steps, len(latent_ids) * model.K, scorer.max_new)
    return beam_search(scorer, BeamConfig(cfg.width, steps, cfg.length_normalization_alpha, cfg.eos_id))


def sample_latents(model: AugmentedModel, length: int, temperature: float, rng: RngState,
                   source: Sequence[int] | None = None) -> tuple[list[int], float]:
    src, smask = _source_arrays(source)
    prefix = model.latent_prefix(1, src, smask)
    return sample_tokens(LatentScorer(model, prefix), temperature, length, rng, eos_id=None)


def greedy_latents(model: AugmentedModel, length: int, source: Sequence[int] | None = None):
    src, smask = _source_arrays(source)
    prefix = model.latent_prefix(1, src, smask)
    return greedy_decode(LatentScorer(model, prefix), length, eos_id=None)


def mixed_sample_beam(model: AugmentedModel, cfg: MixedDecodeConfig, source: Sequence[int] | None = None,
                      latent_length: int | None = None) -> list[MixedSample]:
    """Sample latent codes from the latent predictor, then beam-search ``s`` for each."""
    cfg.validate()
    _require_latent(model)
    m = default_latent_length(model, source, latent_length)
    rng = RngState(cfg.seed)
    out = []
    for _ in range(cfg.num_samples):
        lat, lat_lp = sample_latents(model, m, cfg.latent_temperature, rng, source)
        toks, lp = decode_with_latent(model, lat, cfg.beam, source)
        out.append(MixedSample(lat, toks, lp, lat_lp))
    return out


def latent_override_decode(model: AugmentedModel, latent_ids: Sequence[int], cfg: BeamConfig,
                           source: Sequence[int] | None = None) -> list[int]:
    """Decode ``s`` from user-chosen latent ids (code-inspection probes)."""
    _require_latent(model)
    latent_ids = [int(i) for i in latent_ids]
    if not latent_ids:
        raise ValueError("latent_override_decode: need at least one latent id")
    n = model.num_latent_symbols
    bad = [i for i in latent_ids if not 0 <= i < n]
    if bad:
        raise ValueError(f"latent ids {bad} out of range [0, {n})")
    return decode_with_latent(model, latent_ids, cfg, source)[0]


def sample_sequence(model: AugmentedModel, temperature: float, rng: RngState, max_steps: int,
                    latent_ids: Sequence[int] | None = None, source: Sequence[int] | None = None):
    """Plain multinomial sampling of ``s`` (optionally after a given latent code)."""
    src, smask = _source_arrays(source)
    dense = None
    if latent_ids is not None:
        _require_latent(model)
        dense = model.latent_dense_from_ids(np.asarray([list(latent_ids)], dtype=np.int64))
    prefix = model.main_prefix(dense, 1, src, smask)
    scorer = MainScorer(model, prefix)
    return sample_tokens(scorer, temperature, min(max_steps, scorer.max_new), rng)


def log_prob_of(scorer: Scorer, tokens: Sequence[int]) -> float:
    """Total log-probability of a complete token sequence under ``scorer``."""
    total = 0.0
    for i, t in enumerate(tokens):
        total += float(scorer(np.array([list(tokens[:i])], dtype=np.int64))[0, t])
    return total
