"""Perplexity bookkeeping and discrete sequence autoencoding efficiency (DSAE)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

LN2 = math.log(2.0)


@dataclass(frozen=True)
class DsaeReport:
    ln_p: float
    ln_p_prime: float
    K: int  # noqa: N815
    b: int
    dsae_raw: float
    dsae_clamped: float
    overcapacity: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self, label: str = "") -> str:
        flag = "  (overcapacity)" if self.overcapacity else ""
        head = f"{label:<34s} " if label else ""
        return (f"{head}ln(p)={self.ln_p:.3f}  ln(p')={self.ln_p_prime:.3f}  K={self.K:<3d} b={self.b:<3d}"
                f"  DSAE={100 * self.dsae_clamped:.1f}%{flag}")


def dsae(ln_p: float, ln_p_prime: float, K: int, b: int) -> DsaeReport:  # noqa: N803
    """Fraction of the latent code's bits that the augmented model actually uses.

    ``ln_p`` and ``ln_p_prime`` are natural-log perplexities (nats/token) of the
    baseline and the latent-augmented model. Negative efficiencies are kept in
    ``dsae_raw`` and clamped to 0 in ``dsae_clamped``.
    """
    if K < 1 or b < 1:
        raise ValueError(f"dsae: need K >= 1 and b >= 1, got K={K}, b={b}")
    # ln-perplexity < 0 means perplexity < 1, which is not a valid perplexity.
    if ln_p < 0 or ln_p_prime < 0 or not (math.isfinite(ln_p) and math.isfinite(ln_p_prime)):
        raise ValueError(f"dsae: log-perplexities must be finite and >= 0, got {ln_p}, {ln_p_prime}")
    raw = K * (ln_p - ln_p_prime) / (b * LN2)
    return DsaeReport(
        ln_p=ln_p,
        ln_p_prime=ln_p_prime,
        K=K,
        b=b,
        dsae_raw=raw,
        dsae_clamped=max(0.0, raw),
        overcapacity=(b / K) > (ln_p / LN2),
    )


def nll_to_perplexity(nll: float) -> float:
    if nll < 0:
        raise ValueError(f"negative nll {nll}")
    return math.exp(nll)


def bits_per_token(nll: float) -> float:
    if nll < 0:
        raise ValueError(f"negative nll {nll}")
    return nll / LN2


# Published log-perplexities used to sanity-check the arithmetic.
TABLE1 = [
    ("LM-en (characters)", 1.027, 0.822, 32, 16, 0.59),
    ("LM-en (word)", 3.586, 2.823, 8, 16, 0.55),
    ("NMT-en-de (word)", 1.449, 1.191, 8, 16, 0.19),
    ("LM-en (word, Gumbel-Softmax)", 3.586, 3.417, 8, 16, 0.12),
    ("NMT-en-de (word, Gumbel-Softmax)", 1.449, 1.512, 8, 16, 0.00),
]

TABLE2 = [  # noise standard deviation, ln p, ln p', K, b, DSAE
    (1.5, 3.912, 3.313, 8, 16, 0.432),
    (1.0, 3.912, 3.239, 8, 16, 0.485),
    (0.5, 3.912, 3.236, 8, 16, 0.485),
    (0.0, 3.912, 3.288, 8, 16, 0.450),
]
