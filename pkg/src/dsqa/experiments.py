"""Paired baseline/augmented runs and DSAE reporting shared by the CLI and scripts."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

from .config import RunConfig
from .data import Corpus, load_corpus
from .metrics import DsaeReport, dsae
from .ndgrad import NumericError, StateError
from .train import Trainer


def baseline_config(cfg: RunConfig) -> RunConfig:
    """Same run without the latent prefix (identical main-model capacity)."""
    base = copy.deepcopy(cfg)
    base.model.use_latent = False
    return base


def train(cfg: RunConfig, corpus: Corpus | None = None, steps: int | None = None, **run_kwargs) -> Trainer:
    t = Trainer(cfg, corpus)
    t.run(steps, **run_kwargs)
    return t


def held_out_nll(trainer: Trainer, split: str = "valid", max_batches: int | None = None) -> float:
    """Held-out nats/token over s; refuses augmented models still in bypass."""
    if trainer.model_cfg.use_latent and trainer.model.in_bypass():
        raise StateError(f"checkpoint at step {trainer.step} is still in the bypass phase "
                         f"(pretrain_steps={trainer.model_cfg.compressor.pretrain_steps})")
    return trainer.evaluate(split, max_batches)["sequence_nll"]


def report(ln_p: float, ln_p_prime: float, cfg: RunConfig) -> DsaeReport:
    return dsae(ln_p, ln_p_prime, cfg.K, cfg.bottleneck.bits)


@dataclass
class SweepRow:
    sigma: float
    report: DsaeReport | None
    finite: bool
    error: str = ""

    def csv_row(self) -> dict:
        r = self.report
        return {
            "sigma": self.sigma,
            "ln_p": "" if r is None else f"{r.ln_p:.6f}",
            "ln_p_prime": "" if r is None else f"{r.ln_p_prime:.6f}",
            "K": "" if r is None else r.K,
            "b": "" if r is None else r.b,
            "dsae_raw": "" if r is None else f"{r.dsae_raw:.6f}",
            "dsae_clamped": "" if r is None else f"{r.dsae_clamped:.6f}",
            "overcapacity": "" if r is None else str(r.overcapacity).lower(),
            "finite": str(self.finite).lower(),
            "error": self.error,
        }


SWEEP_FIELDS = ["sigma", "ln_p", "ln_p_prime", "K", "b", "dsae_raw", "dsae_clamped", "overcapacity", "finite",
                "error"]


def noise_sweep(cfg: RunConfig, sigmas, ln_p: float | None = None, corpus: Corpus | None = None,
                callback=None) -> tuple[float, list[SweepRow]]:
    """One augmented run per sigma against a shared baseline (trained here unless ``ln_p`` is given)."""
    corpus = corpus if corpus is not None else load_corpus(cfg.corpus, cfg.seed)
    if ln_p is None:
        ln_p = held_out_nll(train(baseline_config(cfg), corpus))
    rows = []
    for sigma in sigmas:
        if sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {sigma}")
        run_cfg = copy.deepcopy(cfg)
        run_cfg.bottleneck.noise_sigma = float(sigma)
        try:
            t = train(run_cfg, corpus)
            ln_pp = held_out_nll(t)
            ok = math.isfinite(ln_pp)
            row = SweepRow(float(sigma), report(ln_p, ln_pp, run_cfg) if ok else None, ok)
        except NumericError as e:
            row = SweepRow(float(sigma), None, False, str(e))
        rows.append(row)
        if callback:
            callback(row)
    return ln_p, rows
