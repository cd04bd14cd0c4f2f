"""Corpora, tokenization and batching.

Sequences are padded so their length is a multiple of the compression
factor K; every sequence ends with EOS so decoding can terminate.
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .ndgrad import ConfigError

log = logging.getLogger(__name__)

PAD_ID, EOS_ID, UNK_ID, BOUNDARY_ID = 0, 1, 2, 3
RESERVED = ("<pad>", "<eos>", "<unk>", "<boundary>")
NUM_RESERVED = len(RESERVED)


class DataError(IOError):
    """Corpus could not be read or parsed."""


# --------------------------------------------------------------- vocabulary


@dataclass
class Vocabulary:
    tokens: list[str]
    mode: str = "char"
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        self._index = {t: i + NUM_RESERVED for i, t in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        return NUM_RESERVED + len(self.tokens)

    def __len__(self) -> int:
        return self.size

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token_of(self, i: int) -> str:
        if i < NUM_RESERVED:
            return RESERVED[i]
        return self.tokens[i - NUM_RESERVED]

    def digest(self) -> str:
        payload = "\x00".join([self.mode, *self.tokens]).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


def build_vocab(texts: Sequence[str], mode: str = "char", min_frequency: int = 1) -> Vocabulary:
    """Tokens seen at least ``min_frequency`` times, most frequent first."""
    counts: Counter = Counter()
    for t in texts:
        counts.update(_split(t, mode))
    kept = [tok for tok, c in counts.items() if c >= min_frequency]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    return Vocabulary(kept, mode)


def _split(text: str, mode: str) -> list[str]:
    if mode == "char":
        return list(text)
    if mode == "word":
        return text.split()
    raise ConfigError(f"tokenizer mode must be 'char' or 'word', got {mode!r}")


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.id_of(t) for t in _split(text, vocab.mode)]


def detokenize(ids: Sequence[int], vocab: Vocabulary, strip_special: bool = True) -> str:
    out = []
    for i in ids:
        i = int(i)
        if i == EOS_ID and strip_special:
            break
        if i == PAD_ID and strip_special:
            continue
        out.append(vocab.token_of(i))
    return ("" if vocab.mode == "char" else " ").join(out)


# ------------------------------------------------------------------ batches


@dataclass
class SequenceBatch:
    token_ids: np.ndarray  # [B, N], N a multiple of K
    mask: np.ndarray  # [B, N], 1 on real tokens (including EOS)
    lengths: np.ndarray  # [B], real length including EOS
    source_ids: np.ndarray | None = None  # [B, S], left-padded
    source_mask: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]


def pad_to_multiple(n: int, k: int) -> int:
    return -(-n // k) * k


def collate(seqs: Sequence[Sequence[int]], K: int, sources: Sequence[Sequence[int]] | None = None) -> SequenceBatch:  # noqa: N803
    """EOS-terminate, right-pad to a common multiple of K; left-pad sources."""
    with_eos = [list(s) + [EOS_ID] for s in seqs]
    lengths = np.array([len(s) for s in with_eos], dtype=np.int64)
    n = pad_to_multiple(int(lengths.max()), K)
    ids = np.zeros((len(seqs), n), dtype=np.int64)
    for i, s in enumerate(with_eos):
        ids[i, : len(s)] = s
    mask = (np.arange(n)[None, :] < lengths[:, None]).astype(np.float32)
    src = smask = None
    if sources is not None:
        smax = max(len(s) for s in sources)
        src = np.zeros((len(sources), smax), dtype=np.int64)
        smask = np.zeros((len(sources), smax), dtype=np.float32)
        for i, s in enumerate(sources):
            if len(s):
                src[i, smax - len(s) :] = s
                smask[i, smax - len(s) :] = 1
    return SequenceBatch(ids, mask, lengths, src, smask)


class Batcher:
    """Deterministic batches over a fixed set of sequences.

    :meth:`batch_for_step` is a pure function of ``(seed, step)`` so resumed
    training sees the same batches as an uninterrupted run.
    """

    def __init__(self, seqs, batch_size: int, max_len: int, K: int, seed: int = 0,  # noqa: N803
                 sources=None):
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not seqs:
            raise DataError("no sequences to batch")
        self.truncated = 0
        limit = max_len - 1  # room for EOS
        kept = []
        for s in seqs:
            if len(s) > limit:
                self.truncated += 1
                s = s[:limit]
            kept.append(list(s))
        if self.truncated:
            log.warning("truncated %d sequences to %d tokens", self.truncated, limit)
        self.seqs = kept
        self.sources = None if sources is None else [list(s) for s in sources]
        self.batch_size = batch_size
        self.K = K
        self.seed = seed

    def __len__(self) -> int:
        return len(self.seqs)

    def _make(self, idx) -> SequenceBatch:
        srcs = None if self.sources is None else [self.sources[i] for i in idx]
        return collate([self.seqs[i] for i in idx], self.K, srcs)

    def batch_for_step(self, step: int) -> SequenceBatch:
        n = len(self.seqs)
        per_epoch = max(n // self.batch_size, 1)
        epoch, slot = divmod(step, per_epoch)
        perm = np.random.default_rng([self.seed, epoch]).permutation(n)
        idx = perm[slot * self.batch_size : (slot + 1) * self.batch_size]
        if len(idx) < self.batch_size:
            idx = np.concatenate([idx, perm[: self.batch_size - len(idx)]])
        return self._make(idx)

    def __iter__(self) -> Iterator[SequenceBatch]:
        """All sequences once, in order (for evaluation)."""
        for start in range(0, len(self.seqs), self.batch_size):
            yield self._make(range(start, min(start + self.batch_size, len(self.seqs))))


def make_batches(seqs, batch_size: int, max_len: int, K: int, seed: int = 0) -> Batcher:  # noqa: N803
    return Batcher(seqs, batch_size, max_len, K, seed)


# -------------------------------------------------------------- generators

_WORDS = {
    "det": ["the", "a", "every", "some", "my", "our"],
    "adj": ["small", "green", "quiet", "old", "bright", "heavy", "lazy", "brave", "cold", "happy"],
    "noun": ["cat", "dog", "river", "teacher", "garden", "window", "sailor", "engine", "forest", "baker",
             "lamp", "horse"],
    "verb": ["sees", "finds", "likes", "follows", "paints", "carries", "watches", "builds", "cleans", "hears"],
    "adv": ["slowly", "quickly", "today", "again", "gladly", "often"],
    "prep": ["near", "under", "behind", "beside", "over"],
}


def toy_text(seed: int, n_chars: int) -> str:
    """English-like sentences from a small stochastic grammar, one per line.

    Alphabet: lowercase letters, space and period (28 symbols).
    """
    rng = np.random.default_rng(seed)

    def pick(kind):
        words = _WORDS[kind]
        return words[rng.integers(len(words))]

    def np_phrase():
        parts = [pick("det")]
        if rng.random() < 0.5:
            parts.append(pick("adj"))
        parts.append(pick("noun"))
        return parts

    lines, total = [], 0
    while total < n_chars:
        words = np_phrase() + [pick("verb")] + np_phrase()
        r = rng.random()
        if r < 0.3:
            words += [pick("prep")] + np_phrase()
        elif r < 0.55:
            words.append(pick("adv"))
        line = " ".join(words) + "."
        lines.append(line)
        total += len(line) + 1
    return "\n".join(lines) + "\n"


TRANSDUCTION_ALPHABET = 40
TRANSDUCTION_BLOCK = 4


@dataclass
class TransductionCorpus:
    pairs: list[tuple[list[int], list[int]]]
    cipher: np.ndarray  # symbol -> symbol
    seed: int

    def vocab(self) -> Vocabulary:
        return Vocabulary([f"t{i}" for i in range(TRANSDUCTION_ALPHABET)], mode="word")

    def to_ids(self) -> tuple[list[list[int]], list[list[int]]]:
        src = [[x + NUM_RESERVED for x in s] for s, _ in self.pairs]
        tgt = [[x + NUM_RESERVED for x in t] for _, t in self.pairs]
        return src, tgt


def transduce(source: Sequence[int], cipher: np.ndarray, block: int = TRANSDUCTION_BLOCK) -> list[int]:
    """Substitute every symbol, then reverse each ``block``-symbol chunk."""
    sub = [int(cipher[x]) for x in source]
    out = []
    for i in range(0, len(sub), block):
        out.extend(reversed(sub[i : i + block]))
    return out


def synthetic_transduction(seed: int, size: int, min_len: int = 8, max_len: int = 16) -> TransductionCorpus:
    """Random source strings over a 40-symbol alphabet paired with their transduction."""
    if size < 1:
        raise ConfigError("synthetic_transduction size must be >= 1")
    rng = np.random.default_rng(seed)
    cipher = rng.permutation(TRANSDUCTION_ALPHABET)
    pairs = []
    for _ in range(size):
        n = int(rng.integers(min_len, max_len + 1))
        src = [int(x) for x in rng.integers(0, TRANSDUCTION_ALPHABET, n)]
        pairs.append((src, transduce(src, cipher)))
    return TransductionCorpus(pairs, cipher, seed)


def transduction_oracle_nll(corpus: TransductionCorpus) -> float:
    """Mean nats/token of the generating rule used as a predictor."""
    total, count = 0.0, 0
    for src, tgt in corpus.pairs:
        pred = transduce(src, corpus.cipher)
        for p, t in zip(pred, tgt):
            total += 0.0 if p == t else float("inf")
            count += 1
    return total / count


# ------------------------------------------------------------- corpus spec


@dataclass
class CorpusSpec:
    source: str = "gen:toy-english"  # a path, or gen:toy-english / gen:transduction
    tokenizer: str = "char"
    min_word_frequency: int = 1
    train_fraction: float = 0.9
    valid_fraction: float = 0.1
    size: int = 200000  # characters for toy-english, pairs for transduction

    def validate(self) -> None:
        if abs(self.train_fraction + self.valid_fraction - 1.0) > 1e-9:
            raise ConfigError("train_fraction + valid_fraction must equal 1")
        if self.valid_fraction <= 0:
            raise ConfigError("valid_fraction must be positive")
        if self.tokenizer not in ("char", "word"):
            raise ConfigError(f"tokenizer must be char or word, got {self.tokenizer!r}")


@dataclass
class Corpus:
    vocab: Vocabulary
    train: list[list[int]]
    valid: list[list[int]]
    train_sources: list[list[int]] | None = None
    valid_sources: list[list[int]] | None = None

    @property
    def conditional(self) -> bool:
        return self.train_sources is not None


def _split_index(n: int, spec: CorpusSpec) -> int:
    cut = int(round(n * spec.train_fraction))
    return min(max(cut, 1 if n > 1 else 0), n - 1)


def load_corpus(spec: CorpusSpec, seed: int = 0) -> Corpus:
    spec.validate()
    if spec.source == "gen:transduction":
        tc = synthetic_transduction(seed, spec.size)
        src, tgt = tc.to_ids()
        cut = _split_index(len(src), spec)
        return Corpus(tc.vocab(), tgt[:cut], tgt[cut:], src[:cut], src[cut:])
    if spec.source == "gen:toy-english":
        text = toy_text(seed, spec.size)
    elif spec.source.startswith("gen:"):
        raise ConfigError(f"unknown corpus generator {spec.source!r}")
    else:
        path = Path(spec.source)
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            raise DataError(f"cannot read corpus {path}: {e}") from e
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise DataError(f"corpus {spec.source} has fewer than 2 nonempty lines")
    cut = _split_index(len(lines), spec)
    vocab = build_vocab(lines[:cut], spec.tokenizer, spec.min_word_frequency)
    encode = lambda ls: [tokenize(ln, vocab) for ln in ls]  # noqa: E731
    return Corpus(vocab, encode(lines[:cut]), encode(lines[cut:]))


# ---------------------------------------------------------- token-id files

TOKEN_FILE_MAGIC = "#dsqa-tokens v1"


def write_token_file(path, seqs, vocab: Vocabulary, seed: int, sources=None) -> None:
    """One sequence per line as space-separated ids (``src | tgt`` for pairs)."""
    lines = [f"{TOKEN_FILE_MAGIC} vocab={vocab.digest()} seed={seed}"]
    for i, s in enumerate(seqs):
        body = " ".join(map(str, s))
        if sources is not None:
            body = " ".join(map(str, sources[i])) + " | " + body
        lines.append(body)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_token_file(path) -> tuple[dict, list[list[int]], list[list[int]] | None]:
    try:
        raw = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read token file {path}: {e}") from e
    if not raw or not raw[0].startswith(TOKEN_FILE_MAGIC):
        raise DataError(f"{path}: missing '{TOKEN_FILE_MAGIC}' header")
    header = dict(kv.split("=", 1) for kv in raw[0][len(TOKEN_FILE_MAGIC) :].split())
    seqs, sources = [], []
    for ln in raw[1:]:
        if "|" in ln:
            a, b = ln.split("|", 1)
            sources.append([int(x) for x in a.split()])
            seqs.append([int(x) for x in b.split()])
        else:
            seqs.append([int(x) for x in ln.split()])
    return header, seqs, (sources or None)
