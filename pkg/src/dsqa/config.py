"""Run configuration and its flat ``section.key=value`` text format.

Example::

    seed=7
    compressor.k=2
    bottleneck.kind=semhash
    bottleneck.bits=8
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .bottleneck import GumbelConfig, SemhashConfig
from .compressor import CompressorConfig
from .data import CorpusSpec, pad_to_multiple
from .decoding import BeamConfig, MixedDecodeConfig
from .ndgrad import AdamConfig, ConfigError
from .seqmodel import ModelConfig, TransformerConfig


@dataclass
class BottleneckSection:
    kind: str = "semhash"  # semhash | gumbel
    bits: int = 16
    noise_sigma: float = 1.0
    mix_probability: float = 0.5
    filter_size: int = 4096
    bit_polarity: str = "positive_is_one"
    num_symbols: int = 0  # gumbel; 0 means 2**bits
    tau_start: float = 1.0
    tau_end: float = 0.1
    tau_decay_steps: int = 10000
    variance_penalty_weight: float = 0.0


@dataclass
class CompressorSection:
    k: int = 3
    local: bool = False
    pretrain_steps: int = 10000


@dataclass
class ModelSection:
    use_latent: bool = True
    sequence_loss_weight: float = 1.0
    latent_loss_weight: float = 1.0
    zero_latent: bool = False


@dataclass
class DecodeSection:
    latent_temperature: float = 1.0
    num_samples: int = 10
    seed: int = 1


@dataclass
class RunConfig:
    seed: int = 0
    total_steps: int = 20000
    batch_size: int = 16
    max_len: int = 64  # tokens of s per sequence, including EOS
    checkpoint_interval: int = 1000
    log_interval: int = 50
    eval_batches: int = 0  # 0 evaluates the full validation split
    output_dir: str = "runs/default"
    transformer: TransformerConfig = field(default_factory=lambda: TransformerConfig(vocab_size=0, max_len=0))
    compressor: CompressorSection = field(default_factory=CompressorSection)
    bottleneck: BottleneckSection = field(default_factory=BottleneckSection)
    model: ModelSection = field(default_factory=ModelSection)
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    optim: AdamConfig = field(default_factory=AdamConfig)
    beam: BeamConfig = field(default_factory=BeamConfig)
    decode: DecodeSection = field(default_factory=DecodeSection)

    @property
    def K(self) -> int:  # noqa: N802
        return 2**self.compressor.k

    def bottleneck_config(self, hidden: int):
        b = self.bottleneck
        if b.kind == "semhash":
            return SemhashConfig(b.bits, b.noise_sigma, b.mix_probability, b.filter_size, hidden, b.bit_polarity)
        if b.kind == "gumbel":
            return GumbelConfig(b.num_symbols or 2**b.bits, hidden, b.tau_start, b.tau_end, b.tau_decay_steps,
                                b.variance_penalty_weight)
        raise ConfigError(f"bottleneck.kind must be semhash or gumbel, got {b.kind!r}")

    def model_config(self, vocab_size: int, source_max_len: int | None = None) -> ModelConfig:
        t = dataclasses.replace(self.transformer)
        if t.vocab_size == 0:
            t.vocab_size = vocab_size
        elif t.vocab_size < vocab_size:
            raise ConfigError(f"transformer.vocab_size {t.vocab_size} smaller than corpus vocabulary {vocab_size}")
        if t.max_len == 0:
            n = pad_to_multiple(self.max_len, self.K)
            t.max_len = n + n // self.K + 1
            if source_max_len is not None:
                t.max_len += source_max_len + 1
        comp = CompressorConfig(self.compressor.k, self.compressor.local, t.hidden_size,
                                self.compressor.pretrain_steps, self.bottleneck_config(t.hidden_size))
        m = self.model
        return ModelConfig(t, comp, m.use_latent, source_max_len is not None, m.sequence_loss_weight,
                           m.latent_loss_weight, m.zero_latent)

    def mixed_decode_config(self) -> MixedDecodeConfig:
        d = self.decode
        return MixedDecodeConfig(d.latent_temperature, d.num_samples, d.seed, dataclasses.replace(self.beam))


def desk_preset(**overrides) -> RunConfig:
    """Small configuration that trains on one CPU core in minutes."""
    cfg = RunConfig(
        seed=0,
        total_steps=3000,
        batch_size=16,
        max_len=64,
        transformer=TransformerConfig(num_layers=2, hidden_size=128, filter_size=512, num_heads=4,
                                      vocab_size=0, max_len=0, dropout=0.0),
        compressor=CompressorSection(k=2, local=False, pretrain_steps=1000),
        bottleneck=BottleneckSection(kind="semhash", bits=8, filter_size=512),
        optim=AdamConfig(lr=2e-3, warmup_steps=200),
        corpus=CorpusSpec(source="gen:toy-english", tokenizer="char", size=200000),
    )
    return apply_overrides(cfg, overrides)


# --------------------------------------------------------------- flat text


def _is_section(tp) -> bool:
    return dataclasses.is_dataclass(tp)


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def flatten(cfg, prefix: str = "") -> dict[str, object]:
    out: dict[str, object] = {}
    hints = _hints(type(cfg))
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if _is_section(hints[f.name]):
            out.update(flatten(v, f"{prefix}{f.name}."))
        else:
            out[f"{prefix}{f.name}"] = v
    return out


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    return str(v)


def _parse(raw: str, tp, key: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.lower() == "none":
            return None
        tp = args[0]
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
    except ValueError:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} as {tp.__name__}") from None
    raise ConfigError(f"config key {key}: unsupported type {tp}")


def _field_type(cfg, dotted: str):
    obj = cfg
    parts = dotted.split(".")
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or p not in {f.name for f in dataclasses.fields(obj)}:
            raise ConfigError(f"unknown config section in {dotted!r}")
        obj = getattr(obj, p)
    hints = _hints(type(obj))
    if parts[-1] not in hints or _is_section(hints[parts[-1]]):
        raise ConfigError(f"unknown config key {dotted!r}")
    return obj, parts[-1], hints[parts[-1]]


def set_key(cfg, dotted: str, raw) -> None:
    obj, name, tp = _field_type(cfg, dotted)
    value = _parse(raw, tp, dotted) if isinstance(raw, str) else raw
    setattr(obj, name, value)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    for k, v in overrides.items():
        set_key(cfg, k.replace("__", "."), v)
    return cfg


def dumps(cfg: RunConfig) -> str:
    return "".join(f"{k}={_format(v)}\n" for k, v in flatten(cfg).items())


def loads(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        set_key(cfg, k.strip(), v)
    return cfg


def load(path, env: dict | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return apply_env(loads(text), env)


def apply_env(cfg: RunConfig, env: dict | None = None) -> RunConfig:
    """``DSQA_SEED`` overrides the configured seed."""
    env = os.environ if env is None else env
    if env.get("DSQA_SEED"):
        cfg.seed = _parse(env["DSQA_SEED"], int, "DSQA_SEED")
    return cfg


def save(cfg: RunConfig, path) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")
