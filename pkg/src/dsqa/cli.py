"""Command-line harness: ``dsqa <command> [flags]``.

Errors print one line ``dsqa: error[<code>] <kind>: <message>`` to stderr
and exit with 2 (configuration), 3 (data) or 4 (numeric failure).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import decoding, experiments
from .checkpoint import CheckpointError, DirectoryLock
from .data import DataError, detokenize, tokenize
from .metrics import TABLE1, TABLE2, dsae
from .ndgrad import ConfigError, DimensionError, NumericError, RngState, StateError
from .seqmodel import CapacityError
from .train import Trainer

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

log = logging.getLogger("dsqa")


# ------------------------------------------------------------------ config


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file (default: desk preset)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    g = p.add_argument_group("config fields (same names as the config file)")
    for key in config_mod.flatten(config_mod.RunConfig()):
        g.add_argument(f"--{key}", dest=f"cfg:{key}", metavar="V", default=None)


def _run_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.apply_env(config_mod.desk_preset())
    for kv in args.set:
        if "=" not in kv:
            raise ConfigError(f"--set expects KEY=VALUE, got {kv!r}")
        k, v = kv.split("=", 1)
        config_mod.set_key(cfg, k.strip(), v)
    for name, v in vars(args).items():
        if name.startswith("cfg:") and v is not None:
            config_mod.set_key(cfg, name[4:], v)
    return cfg


def _emit(records, out_path=None) -> None:
    fh = open(out_path, "w", encoding="utf-8") if out_path else None
    try:
        for r in records:
            line = json.dumps(r)
            print(line)
            if fh:
                fh.write(line + "\n")
    finally:
        if fh:
            fh.close()


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume)
        cfg = trainer.cfg
        if args.total_steps_override is not None:
            cfg.total_steps = args.total_steps_override
        if getattr(args, "cfg:output_dir"):
            cfg.output_dir = getattr(args, "cfg:output_dir")
    else:
        cfg = _run_config(args)
        trainer = Trainer(cfg)
    out = Path(cfg.output_dir)
    with DirectoryLock(out):
        config_mod.save(cfg, out / "config.txt")
        log.info("training %d params from step %d to %d; output in %s",
                 sum(p.size for p in trainer.model.params), trainer.step, cfg.total_steps, out)

        def show(rec):
            log.info("step %(step)d %(phase)s seq=%(sequence_nll).4f lat=%(latent_nll).4f", rec)

        trainer.run(cfg.total_steps, metrics_path=out / "metrics.jsonl", checkpoint_dir=out, callback=show)
    return 0


def _offline_reports(args):
    if args.table1:
        for label, ln_p, ln_pp, K, b, _ in TABLE1:  # noqa: N806
            yield label, dsae(ln_p, ln_pp, K, b)
    if args.table2:
        for sigma, ln_p, ln_pp, K, b, _ in TABLE2:  # noqa: N806
            yield f"noise sigma {sigma}", dsae(ln_p, ln_pp, K, b)
    if args.offline:
        ln_p, ln_pp, K, b = args.offline  # noqa: N806
        yield "offline", dsae(float(ln_p), float(ln_pp), int(K), int(b))


def cmd_eval(args) -> int:
    records = []
    if args.table1 or args.table2 or args.offline:
        for label, rep in _offline_reports(args):
            print(rep.row(label), file=sys.stderr)
            records.append({"label": label, **rep.to_dict()})
        _emit(records, args.out)
        return 0
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint (or --table1/--table2/--offline)")
    aug = Trainer.from_checkpoint(args.checkpoint)
    ln_pp = experiments.held_out_nll(aug, args.split, args.max_batches)
    if args.baseline:
        base = Trainer.from_checkpoint(args.baseline)
        ln_p = experiments.held_out_nll(base, args.split, args.max_batches)
    elif args.baseline_nll is not None:
        ln_p = args.baseline_nll
    else:
        raise ConfigError("eval needs --baseline CHECKPOINT or --baseline-nll NATS")
    rep = experiments.report(ln_p, ln_pp, aug.cfg)
    print(rep.row(Path(args.checkpoint).name), file=sys.stderr)
    _emit([{"label": str(args.checkpoint), "split": args.split, **rep.to_dict()}], args.out)
    return 0


def cmd_noise_sweep(args) -> int:
    cfg = _run_config(args)
    sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    if any(s < 0 for s in sigmas):
        raise ConfigError(f"noise sigmas must be >= 0, got {sigmas}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=experiments.SWEEP_FIELDS)
        writer.writeheader()

        def write(row):
            writer.writerow(row.csv_row())
            fh.flush()
            log.info("sigma %.2f: %s", row.sigma, row.report.row() if row.report else row.error)

        _, rows = experiments.noise_sweep(cfg, sigmas, ln_p=args.baseline_nll, callback=write)
    return 0 if all(r.finite for r in rows) else EXIT_NUMERIC


def _source_for(trainer: Trainer, args):
    if not trainer.model_cfg.conditional:
        if args.source is not None:
            raise ConfigError("--source given but the checkpoint is unconditional")
        return None
    if args.source is not None:
        return tokenize(args.source, trainer.vocab)
    return trainer.corpus.valid_sources[args.source_index]


def _text(trainer: Trainer, ids) -> str:
    return detokenize(ids, trainer.vocab)


def _latent_length(trainer: Trainer, args, source) -> int:
    if args.latent_length:
        return args.latent_length
    if source is not None:
        return decoding.default_latent_length(trainer.model, source, None)
    return trainer.model.latent_length(trainer.cfg.max_len)


def _beam(trainer: Trainer, args) -> decoding.BeamConfig:
    beam = dataclasses.replace(trainer.cfg.beam)
    if args.beam_width:
        beam.width = args.beam_width
    return beam


def cmd_sample(args) -> int:
    trainer = Trainer.from_checkpoint(args.checkpoint)
    model = trainer.model
    rng = RngState(args.seed)
    source = _source_for(trainer, args)
    records = []
    for i in range(args.num):
        latent = None
        if model.cfg.use_latent:
            m = _latent_length(trainer, args, source)
            latent, _ = decoding.sample_latents(model, m, args.temperature, rng, source)
        toks, lp = decoding.sample_sequence(model, args.temperature, rng, args.max_steps, latent, source)
        records.append({"index": i, "latent_ids": latent, "tokens": toks, "text": _text(trainer, toks),
                        "log_prob": lp})
    _emit(records, args.out)
    return 0


def cmd_decode_mixed(args) -> int:
    trainer = Trainer.from_checkpoint(args.checkpoint)
    cfg = trainer.cfg.mixed_decode_config()
    cfg.num_samples = args.samples
    cfg.seed = args.seed
    if args.latent_temperature is not None:
        cfg.latent_temperature = args.latent_temperature
    cfg.beam = _beam(trainer, args)
    source = _source_for(trainer, args)
    m = _latent_length(trainer, args, source)
    samples = decoding.mixed_sample_beam(trainer.model, cfg, source, m)
    records = [{"index": i, "latent_ids": s.latent_ids, "tokens": s.tokens, "text": _text(trainer, s.tokens),
                "log_prob": s.log_prob, "latent_log_prob": s.latent_log_prob}
               for i, s in enumerate(samples)]
    _emit(records, args.out)
    return 0


def cmd_inspect_latents(args) -> int:
    trainer = Trainer.from_checkpoint(args.checkpoint)
    try:
        ids = [int(x) for x in args.ids.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--ids must be comma-separated integers, got {args.ids!r}") from None
    source = _source_for(trainer, args)
    toks = decoding.latent_override_decode(trainer.model, ids, _beam(trainer, args), source)
    _emit([{"latent_ids": ids, "tokens": toks, "text": _text(trainer, toks)}], args.out)
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsqa", description="Discrete sequence autoencoding laboratory.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model, writing checkpoints and metrics.jsonl")
    _add_config_flags(t)
    t.add_argument("--resume", help="continue from a checkpoint (its stored config is used)")
    t.add_argument("--steps", dest="total_steps_override", type=int, help="total steps when resuming")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="held-out ln p / ln p' and the DSAE report")
    e.add_argument("--checkpoint", help="augmented-model checkpoint (the ln p' role)")
    e.add_argument("--baseline", help="baseline checkpoint (the ln p role)")
    e.add_argument("--baseline-nll", type=float, help="recorded baseline nats/token instead of a checkpoint")
    e.add_argument("--split", choices=["valid", "train"], default="valid")
    e.add_argument("--max-batches", type=int)
    e.add_argument("--table1", action="store_true", help="report DSAE for the published LM/NMT numbers")
    e.add_argument("--table2", action="store_true", help="report DSAE for the published noise sweep")
    e.add_argument("--offline", nargs=4, metavar=("LN_P", "LN_P_PRIME", "K", "B"))
    e.add_argument("--out", help="also write JSONL records here")
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("noise-sweep", help="one run per noise sigma, DSAE per sigma as CSV")
    _add_config_flags(n)
    n.add_argument("--sigmas", default="0.0,0.5,1.0,1.5")
    n.add_argument("--baseline-nll", type=float, help="skip the baseline run and use this ln p")
    n.add_argument("--out", default="noise_sweep.csv")
    n.set_defaults(func=cmd_noise_sweep)

    def decode_flags(d, seed_default=1):
        d.add_argument("--checkpoint", required=True)
        d.add_argument("--seed", type=int, default=seed_default)
        d.add_argument("--source", help="source text for conditional models (default: a validation source)")
        d.add_argument("--source-index", type=int, default=0)
        d.add_argument("--latent-length", type=int)
        d.add_argument("--beam-width", type=int)
        d.add_argument("--out", help="also write JSONL records here")

    s = sub.add_parser("sample", help="multinomial samples (after a sampled latent code)")
    decode_flags(s)
    s.add_argument("--num", type=int, default=5)
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--max-steps", type=int, default=64)
    s.set_defaults(func=cmd_sample)

    m = sub.add_parser("decode-mixed", help="sample latent codes, beam-search s for each")
    decode_flags(m)
    m.add_argument("--samples", type=int, default=10)
    m.add_argument("--latent-temperature", type=float)
    m.set_defaults(func=cmd_decode_mixed)

    i = sub.add_parser("inspect-latents", help="decode s from chosen latent ids")
    decode_flags(i)
    i.add_argument("--ids", required=True, help="comma-separated latent ids, e.g. 3,7,7,9")
    i.set_defaults(func=cmd_inspect_latents)
    return p


def _fail(code: int, kind: str, msg) -> int:
    text = " ".join(str(msg).split())
    print(f"dsqa: error[{code}] {kind}: {text}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    if args.command == "train":
        log.setLevel(logging.INFO)
    try:
        return args.func(args)
    except NumericError as e:
        return _fail(EXIT_NUMERIC, "numeric", e)
    except (DataError, CheckpointError) as e:
        return _fail(EXIT_DATA, "data", e)
    except (ConfigError, StateError, CapacityError, DimensionError, ValueError) as e:
        return _fail(EXIT_CONFIG, "config", e)


if __name__ == "__main__":
    sys.exit(main())
