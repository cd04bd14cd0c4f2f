"""The autoencoding function: K-fold convolutional shortening plus a bottleneck."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import ndgrad as G
from .bottleneck import DiscreteCode, GumbelConfig, SemhashConfig, make_bottleneck
from .ndgrad import ConfigError, DiffArray, ParamStore, RngState

BottleneckConfig = Union[SemhashConfig, GumbelConfig]


@dataclass
class CompressorConfig:
    k: int = 3
    local: bool = False
    hidden_size: int = 512
    pretrain_steps: int = 10000
    bottleneck: BottleneckConfig = field(default_factory=SemhashConfig)

    @property
    def K(self) -> int:  # noqa: N802
        return 2**self.k

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError(f"compressor k must be >= 1, got {self.k}")
        if self.pretrain_steps < 0:
            raise ConfigError("pretrain_steps must be >= 0")
        if self.bottleneck.hidden_size != self.hidden_size:
            raise ConfigError(
                f"bottleneck hidden_size {self.bottleneck.hidden_size} != compressor hidden_size {self.hidden_size}"
            )
        self.bottleneck.validate()


def receptive_field(cfg: CompressorConfig) -> int:
    """Input span feeding one latent symbol.

    Exact for the local variant; for the global variant this is the lower
    bound contributed by the kernel-3 convolutions of the last step alone.
    """
    if cfg.k < 1:
        raise ConfigError(f"compressor k must be >= 1, got {cfg.k}")
    if cfg.local:
        return 2**cfg.k
    return 3 * 2 ** (cfg.k - 1)


def latent_mask(token_mask: np.ndarray, K: int) -> np.ndarray:  # noqa: N803
    """1 where a latent position covers at least one real token."""
    token_mask = np.asarray(token_mask)
    n = token_mask.shape[-1]
    m = -(-n // K)
    padded = np.zeros(token_mask.shape[:-1] + (m * K,), dtype=token_mask.dtype)
    padded[..., :n] = token_mask
    return (padded.reshape(*token_mask.shape[:-1], m, K).max(axis=-1) > 0).astype(np.float32)


class HalvingStep:
    """Residual block of three (relu, conv k=3, layer-norm) then conv k=2 s=2."""

    def __init__(self, store: ParamStore, hidden: int):
        self.convs = [G.Conv1d(store, f"conv{i}", 3, hidden, hidden) for i in range(3)]
        self.norms = [G.LayerNorm(store, f"norm{i}", hidden) for i in range(3)]
        self.down = G.Conv1d(store, "down", 2, hidden, hidden, stride=2)

    def __call__(self, x: DiffArray) -> DiffArray:
        r = x
        for conv, norm in zip(self.convs, self.norms):
            r = norm(conv(G.relu(r)))
        return self.down(G.add(x, r))


@dataclass
class Compressed:
    s_prime: DiffArray
    dense_latent: DiffArray
    latent: DiscreteCode | None
    aux_loss: DiffArray | None = None

    @property
    def bypassed(self) -> bool:
        return self.latent is None


class Compressor:
    def __init__(self, store: ParamStore, cfg: CompressorConfig):
        cfg.validate()
        self.cfg = cfg
        if cfg.local:
            self.steps = [G.Conv1d(store.scope(f"step{i}"), "down", 2, cfg.hidden_size, cfg.hidden_size, stride=2)
                          for i in range(cfg.k)]
        else:
            self.steps = [HalvingStep(store.scope(f"step{i}"), cfg.hidden_size) for i in range(cfg.k)]
        self.bottleneck = make_bottleneck(store.scope("bottleneck"), cfg.bottleneck)

    @property
    def num_symbols(self) -> int:
        return self.bottleneck.num_symbols

    def shorten(self, x: DiffArray) -> DiffArray:
        """Apply the k halving steps: ``[..., N, hidden] -> [..., ceil(N/K), hidden]``."""
        for i, step in enumerate(self.steps):
            if self.cfg.local and i > 0:
                x = G.relu(x)
            x = step(x)
        return x

    def in_bypass(self, step: int) -> bool:
        return step < self.cfg.pretrain_steps

    def __call__(
        self,
        s_embedded: DiffArray,
        train: bool,
        step: int,
        rng: RngState | None = None,
        token_mask: np.ndarray | None = None,
    ) -> Compressed:
        if s_embedded.shape[-2] == 0:
            raise ValueError("compress: empty sequence")
        s_prime = self.shorten(s_embedded)
        if self.in_bypass(step):
            return Compressed(s_prime, s_prime, None)
        lmask = None if token_mask is None else latent_mask(token_mask, self.cfg.K)
        kwargs = {"mask": lmask} if isinstance(self.cfg.bottleneck, GumbelConfig) else {}
        dense, code, aux = self.bottleneck(
            s_prime, train, rng, step=step - self.cfg.pretrain_steps, **kwargs
        )
        return Compressed(s_prime, dense, code, aux)

    def embed_ids(self, ids) -> DiffArray:
        return self.bottleneck.embed_ids(ids)
