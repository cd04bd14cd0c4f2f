"""Train on the synthetic conditional task and show mixed sample-beam decoding.

Each source gets several latent codes sampled from the latent predictor; the
target is then beam-searched under each code.
"""

import argparse

from dsqa import decoding
from dsqa.config import desk_preset
from dsqa.data import detokenize
from dsqa.train import Trainer


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2500)
    ap.add_argument("--pretrain", type=int, default=500)
    ap.add_argument("--samples", type=int, default=10)
    ap.add_argument("--sources", type=int, default=3)
    ap.add_argument("--save", help="write the trained checkpoint here")
    args = ap.parse_args()

    cfg = desk_preset(**{"corpus.source": "gen:transduction", "corpus.tokenizer": "word", "corpus.size": 4000,
                         "compressor.pretrain_steps": args.pretrain, "total_steps": args.steps, "max_len": 20})
    t = Trainer(cfg)
    for rec in t.run():
        if rec["step"] % 250 == 0:
            print(f"step {rec['step']:5d} {rec['phase']:10s} seq {rec['sequence_nll']:.3f} lat {rec['latent_nll']:.3f}")
    if args.save:
        t.save(args.save)

    mc = cfg.mixed_decode_config()
    mc.num_samples = args.samples
    for i in range(args.sources):
        src = t.corpus.valid_sources[i]
        out = decoding.mixed_sample_beam(t.model, mc, src)
        print(f"\nsource {detokenize(src, t.vocab)}\ntarget {detokenize(t.corpus.valid[i], t.vocab)}")
        for s in out:
            print(f"  {s.latent_ids!s:24s} {detokenize(s.tokens, t.vocab)}")
        print(f"  distinct outputs: {len({tuple(s.tokens) for s in out})}")


if __name__ == "__main__":
    main()
