"""Corpus handling: CoNLL ingestion, vocabularies, synthetic task, batching.

The synthetic "delayed-trigger" task generates random symbol sequences in
which a TRIGGER token arms an active labeling regime: after a configurable
delay (trigger_distance steps), tokens are tagged B then I... until a
RESET token disarms it. Correct tags depend both on state carried across
arbitrary distances and, for distances > 1, on counting steps since the
trigger, so the input/forget gates do real graded work and gate
quantization has something to break.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNK = "<unk>"
UNK_ID = 0

TRIGGER = "<trig>"
RESET = "<rst>"


class ConllFormatError(ValueError):
    """Raised on malformed CoNLL column files."""


def read_conll(path, token_col: int = 0, tag_col: int = -1):
    """Parse a CoNLL column file into [(tokens, tags)] string pairs.

    Whitespace-separated columns, blank line ends a sentence, `#` lines are
    comments. The final sentence is emitted even without a trailing blank.
    """
    sentences = []
    tokens, tags = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                if tokens:
                    sentences.append((tokens, tags))
                    tokens, tags = [], []
                continue
            if stripped.startswith("#"):
                continue
            cols = stripped.split()
            if len(cols) < 2:
                raise ConllFormatError(
                    f"{path}:{lineno}: need a token and a tag column, "
                    f"line has {len(cols)}")
            try:
                tok = cols[token_col]
                tag = cols[tag_col]
            except IndexError:
                raise ConllFormatError(
                    f"{path}:{lineno}: need columns {token_col} and {tag_col}, "
                    f"line has {len(cols)}") from None
            tokens.append(tok)
            tags.append(tag)
    if tokens:
        sentences.append((tokens, tags))
    return sentences


@dataclass
class Vocab:
    """Bidirectional string <-> id map with a reserved UNK at id 0."""

    itos: list[str]
    stoi: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.stoi = {s: i for i, s in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def encode(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def decode(self, idx: int) -> str:
        return self.itos[idx]


def build_vocab(sentences, min_count: int = 1) -> tuple[Vocab, Vocab]:
    """Token and tag vocabs from raw train sentences.

    Token ids are assigned by (count desc, lexicographic); rare tokens fall
    to UNK. Tags never collapse and carry no UNK semantics (id 0 is still
    reserved so encode/decode stay uniform).
    """
    if not sentences:
        raise ValueError("cannot build a vocabulary from an empty train split")
    tok_counts: dict[str, int] = {}
    tag_set = set()
    for tokens, tags in sentences:
        for t in tokens:
            tok_counts[t] = tok_counts.get(t, 0) + 1
        tag_set.update(tags)
    kept = [t for t, c in tok_counts.items() if c >= min_count and t != UNK]
    kept.sort(key=lambda t: (-tok_counts[t], t))
    token_vocab = Vocab([UNK] + kept)
    tag_vocab = Vocab(sorted(tag_set))
    return token_vocab, tag_vocab


@dataclass
class Dataset:
    """Encoded splits plus the vocabularies that encoded them."""

    splits: dict[str, list[tuple[list[int], list[int]]]]
    token_vocab: Vocab
    tag_vocab: Vocab
    task: str = "ner"  # "ner"/"chunking" use chunk F1; "pos" uses accuracy

    def encode(self, tokens, tags):
        return ([self.token_vocab.encode(t) for t in tokens],
                [self.tag_vocab.stoi[t] for t in tags])

    def split(self, name: str):
        return self.splits[name]


def dataset_from_conll(train_path, dev_path=None, test_path=None,
                       token_col: int = 0, tag_col: int = -1,
                       min_count: int = 1, task: str = "ner") -> Dataset:
    raw_train = read_conll(train_path, token_col, tag_col)
    token_vocab, tag_vocab = build_vocab(raw_train, min_count)
    splits = {}
    for name, path in (("train", train_path), ("dev", dev_path), ("test", test_path)):
        if path is None:
            continue
        raw = raw_train if name == "train" else read_conll(path, token_col, tag_col)
        enc = []
        for tokens, tags in raw:
            for t in tags:
                if t not in tag_vocab.stoi:
                    raise ValueError(f"unseen tag {t!r} in {name} split")
            enc.append(([token_vocab.encode(t) for t in tokens],
                        [tag_vocab.stoi[t] for t in tags]))
        splits[name] = enc
    return Dataset(splits=splits, token_vocab=token_vocab, tag_vocab=tag_vocab,
                   task=task)


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 2000
    n_dev: int = 400
    n_test: int = 400
    seq_len: tuple[int, int] = (6, 14)
    alphabet: int = 10
    trigger_distance: int = 1  # steps after the trigger before labeling starts


def label_delayed_trigger(tokens: list[str], trigger_distance: int = 1) -> list[str]:
    """Pure labeling rule of the synthetic task; tags derive from tokens alone.

    A TRIGGER arms the regime; the trigger_distance-th ordinary token after
    it opens a span (B, then I...) that runs until a RESET. With the
    default distance of 1 labeling starts immediately after the trigger.
    """
    tags = []
    armed = False
    since = 0
    first = False
    for tok in tokens:
        if tok == TRIGGER:
            tags.append("O")
            armed, since, first = True, 0, True
        elif tok == RESET:
            tags.append("O")
            armed = False
        elif armed:
            since += 1
            if since >= trigger_distance:
                tags.append("B" if first else "I")
                first = False
            else:
                tags.append("O")
        else:
            tags.append("O")
    return tags


def synth_task(seed: int, cfg: SynthConfig = SynthConfig()) -> Dataset:
    """Deterministic delayed-trigger dataset with disjoint splits."""
    for name in ("n_train", "n_dev", "n_test"):
        if getattr(cfg, name) < 1:
            raise ValueError(f"{name} must be >= 1")
    rng = np.random.default_rng(seed)
    symbols = [f"s{k}" for k in range(cfg.alphabet)]
    seen: set[tuple[str, ...]] = set()

    # regime symbols are spaced so a span can outlive the labeling delay
    gap = cfg.trigger_distance + 2

    def gen_sentence():
        lo, hi = cfg.seq_len
        n = int(rng.integers(lo, hi + 1))
        tokens = []
        cooldown = 0
        active = False
        for _ in range(n):
            roll = rng.uniform()
            if cooldown == 0 and not active and roll < 0.25:
                tokens.append(TRIGGER)
                active = True
                cooldown = gap
            elif cooldown == 0 and active and roll < 0.20:
                tokens.append(RESET)
                active = False
                cooldown = gap
            else:
                tokens.append(symbols[int(rng.integers(cfg.alphabet))])
                cooldown = max(0, cooldown - 1)
        return tokens

    def gen_split(n):
        out = []
        while len(out) < n:
            tokens = gen_sentence()
            key = tuple(tokens)
            if key in seen:
                continue
            seen.add(key)
            out.append((tokens,
                        label_delayed_trigger(tokens, cfg.trigger_distance)))
        return out

    raw = {"train": gen_split(cfg.n_train), "dev": gen_split(cfg.n_dev),
           "test": gen_split(cfg.n_test)}
    token_vocab, tag_vocab = build_vocab(raw["train"], min_count=1)
    splits = {
        name: [([token_vocab.encode(t) for t in toks],
                [tag_vocab.stoi[t] for t in tags])
               for toks, tags in sents]
        for name, sents in raw.items()
    }
    return Dataset(splits=splits, token_vocab=token_vocab, tag_vocab=tag_vocab,
                   task="ner")


def batch_iter(sentences, batch_size: int, shuffle_seed: int, epoch: int):
    """Deterministic per-epoch shuffle; yields every sentence exactly once."""
    if not sentences:
        raise ValueError("cannot iterate an empty split")
    rng = np.random.default_rng([shuffle_seed, epoch])
    order = rng.permutation(len(sentences))
    for start in range(0, len(sentences), batch_size):
        yield [sentences[i] for i in order[start:start + batch_size]]


def load_embeddings(path, token_vocab: Vocab, embedding: np.ndarray) -> int:
    """Fill embedding rows from a `token v1 v2 ...` text file.

    Rows for unknown tokens are left at their random init. Returns the
    number of rows filled.
    """
    filled = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            idx = token_vocab.stoi.get(parts[0])
            if idx is None:
                continue
            vec = np.asarray([float(v) for v in parts[1:]], dtype=np.float64)
            if vec.shape[0] != embedding.shape[1]:
                raise ValueError(
                    f"embedding width {vec.shape[0]} != table width "
                    f"{embedding.shape[1]} for token {parts[0]!r}")
            embedding[idx] = vec
            filled += 1
    return filled
