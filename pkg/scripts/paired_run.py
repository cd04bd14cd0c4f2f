"""Train a no-latent baseline and a semantic-hashing model on the desk preset, then report DSAE.

    python scripts/paired_run.py --post-steps 5000 --kind semhash
"""

import argparse
import json
import logging

from dsqa.config import desk_preset
from dsqa.data import load_corpus
from dsqa.experiments import baseline_config, held_out_nll, report, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--post-steps", type=int, default=5000, help="training steps after the bypass phase")
    ap.add_argument("--kind", choices=["semhash", "gumbel"], default="semhash")
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = desk_preset(seed=args.seed, **{"bottleneck.kind": args.kind, "bottleneck.noise_sigma": args.sigma})
    cfg.total_steps = cfg.compressor.pretrain_steps + args.post_steps
    corpus = load_corpus(cfg.corpus, cfg.seed)

    ln_p = held_out_nll(train(baseline_config(cfg), corpus))
    ln_pp = held_out_nll(train(cfg, corpus))
    r = report(ln_p, ln_pp, cfg)
    print(json.dumps(r.to_dict()))
    print(r.row(f"desk {args.kind} sigma={args.sigma}"))


if __name__ == "__main__":
    main()
