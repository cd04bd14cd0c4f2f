"""Training loop, evaluation and checkpoint I/O for a :class:`RunConfig`."""

from __future__ import annotations

import json
import logging
import math
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint as ckpt_io
from . import config as config_mod
from .compressor import latent_mask
from .config import RunConfig
from .data import Batcher, Corpus, Vocabulary, load_corpus
from .ndgrad import NumericError, RngState, Tape, adam_step, clip_by_global_norm, learning_rate
from .seqmodel import AugmentedModel

log = logging.getLogger(__name__)


class Trainer:
    def __init__(self, cfg: RunConfig, corpus: Corpus | None = None):
        self.cfg = cfg
        self.corpus = corpus if corpus is not None else load_corpus(cfg.corpus, cfg.seed)
        c = self.corpus
        src_max = None
        if c.conditional:
            src_max = max(len(s) for s in (c.train_sources + c.valid_sources))
        self.model_cfg = cfg.model_config(c.vocab.size, src_max)
        self.model = AugmentedModel(self.model_cfg, seed=cfg.seed)
        self.rng = RngState(cfg.seed).spawn(1)
        K = cfg.K  # noqa: N806
        self.train_batches = Batcher(c.train, cfg.batch_size, cfg.max_len, K, cfg.seed, c.train_sources)
        self.valid_batches = Batcher(c.valid, cfg.batch_size, cfg.max_len, K, cfg.seed, c.valid_sources)

    @property
    def step(self) -> int:
        return self.model.step

    @property
    def vocab(self) -> Vocabulary:
        return self.corpus.vocab

    def phase(self, step: int | None = None) -> str:
        if not self.model_cfg.use_latent:
            return "baseline"
        return "bypass" if self.model.in_bypass(step) else "bottleneck"

    def train_step(self) -> dict:
        model, opt = self.model, self.cfg.optim
        step = model.step
        batch = self.train_batches.batch_for_step(step)
        with Tape() as tape:
            out = model.forward(batch, train=True, step=step, rng=self.rng)
        loss = out["total_loss"].item()
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss {loss} at step {step}")
        params = model.params
        grads = tape.backward(out["total_loss"], params)
        grads, gnorm = clip_by_global_norm(grads, opt.clip_norm)
        if not math.isfinite(gnorm):
            raise NumericError(f"non-finite gradient norm at step {step}")
        lr = learning_rate(opt, step + 1)
        adam_step(params, grads, lr, opt.beta1, opt.beta2, opt.epsilon, step + 1)
        model.step = step + 1
        lat = out["latent_nll"]
        return {
            "step": step + 1,
            "phase": self.phase(step),
            "sequence_nll": out["sequence_nll"].item(),
            "latent_nll": 0.0 if lat is None else lat.item(),
            "total_loss": loss,
            "grad_norm": gnorm,
            "lr": lr,
        }

    def evaluate(self, split: str = "valid", max_batches: int | None = None, bypass: bool | None = None) -> dict:
        """Token-weighted held-out NLL (nats/token over s) in eval mode.

        ``bypass`` forces the dense side-path (True) or the discrete code
        (False) regardless of the current step.
        """
        batches = self.valid_batches if split == "valid" else self.train_batches
        limit = max_batches if max_batches is not None else (self.cfg.eval_batches or None)
        step = self.model.step
        if bypass is True:
            step = 0
        elif bypass is False:
            step = max(step, self.model_cfg.compressor.pretrain_steps)
        seq_sum = seq_n = lat_sum = lat_n = 0.0
        for i, batch in enumerate(batches):
            if limit is not None and i >= limit:
                break
            out = self.model.forward(batch, train=False, step=step)
            seq_sum += out["sequence_nll"].item() * out["num_tokens"]
            seq_n += out["num_tokens"]
            if out["latent_nll"] is not None:
                n_lat = float(latent_mask(batch.mask, self.model.K).sum())
                lat_sum += out["latent_nll"].item() * n_lat
                lat_n += n_lat
        return {
            "sequence_nll": seq_sum / seq_n,
            "latent_nll": lat_sum / lat_n if lat_n else 0.0,
            "tokens": seq_n,
        }

    # --------------------------------------------------------------- state

    def header(self) -> dict:
        return {
            "config": config_mod.dumps(self.cfg),
            "step": self.model.step,
            "rng": self.rng.state_dict(),
            "vocab": {"mode": self.vocab.mode, "tokens": self.vocab.tokens},
            "model_config": {
                "vocab_size": self.model_cfg.transformer.vocab_size,
                "max_len": self.model_cfg.transformer.max_len,
                "conditional": self.model_cfg.conditional,
            },
        }

    def save(self, path) -> None:
        ckpt_io.write(path, self.header(), ckpt_io.model_tensors(self.model))

    def load_state(self, ck: ckpt_io.Checkpoint) -> None:
        ckpt_io.restore_model(self.model, ck)
        self.rng = RngState.from_state_dict(ck.header["rng"])

    @classmethod
    def from_checkpoint(cls, path, corpus: Corpus | None = None) -> "Trainer":
        ck = ckpt_io.read(path)
        cfg = config_mod.loads(ck.header["config"])
        t = cls(cfg, corpus)
        stored = ck.header.get("vocab", {})
        if stored and (stored.get("tokens") != t.vocab.tokens or stored.get("mode") != t.vocab.mode):
            raise ckpt_io.CheckpointError(f"{path}: corpus vocabulary differs from the one the checkpoint was "
                                          "trained with")
        t.load_state(ck)
        return t

    # ----------------------------------------------------------------- loop

    def run(
        self,
        total_steps: int | None = None,
        metrics_path=None,
        checkpoint_dir=None,
        callback: Callable[[dict], None] | None = None,
    ) -> list[dict]:
        """Train until ``model.step == total_steps``; returns logged records."""
        total = self.cfg.total_steps if total_steps is None else total_steps
        records = []
        fh = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
        ckdir = Path(checkpoint_dir) if checkpoint_dir else None
        t0 = time.time()
        try:
            while self.model.step < total:
                try:
                    rec = self.train_step()
                except NumericError:
                    log.error("numeric failure at step %d; last checkpoint kept", self.model.step)
                    raise
                rec["wall_time"] = round(time.time() - t0, 3)
                last = self.model.step == total
                if rec["step"] % max(self.cfg.log_interval, 1) == 0 or last:
                    records.append(rec)
                    if fh:
                        fh.write(json.dumps(rec) + "\n")
                        fh.flush()
                    if callback:
                        callback(rec)
                if ckdir and (last or (self.cfg.checkpoint_interval and rec["step"] % self.cfg.checkpoint_interval == 0)):
                    self.save(ckdir / f"ckpt-{rec['step']:07d}.dsqa")
                    self.save(ckdir / "latest.dsqa")
        finally:
            if fh:
                fh.close()
        return records


def params_equal(a: AugmentedModel, b: AugmentedModel) -> bool:
    pa = {p.name: p for p in a.params}
    pb = {p.name: p for p in b.params}
    if pa.keys() != pb.keys():
        return False
    return all(np.array_equal(pa[k].value, pb[k].value) for k in pa)
