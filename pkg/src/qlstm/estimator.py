"""Scikit-learn style wrapper around the tagger training loop.

X is a list of token-string sequences, y a parallel list of BIO tag
sequences. fit() carves a deterministic dev slice off the training data
for early stopping; predict() returns tag-string sequences; score() is
micro-averaged chunk F1.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import Dataset, build_vocab
from .train import TrainConfig, chunk_f1, train


class LstmTagger(BaseEstimator):
    """Quantization-aware Bi-LSTM-CRF sequence tagger."""

    def __init__(self, settings: str = "", r: float = 0.5, c: float = 1.0,
                 epsilon: float = 0.1, ste: str = "full", head: str = "crf",
                 hidden: int = 16, emb_dim: int = 16, lr: float = 1e-3,
                 optimizer: str = "adam", max_epochs: int = 25,
                 patience: int = 5, batch_size: int = 8, min_count: int = 1,
                 dev_fraction: float = 0.1, seed: int = 0):
        self.settings = settings
        self.r = r
        self.c = c
        self.epsilon = epsilon
        self.ste = ste
        self.head = head
        self.hidden = hidden
        self.emb_dim = emb_dim
        self.lr = lr
        self.optimizer = optimizer
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.min_count = min_count
        self.dev_fraction = dev_fraction
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            settings=self.settings, r=self.r, c=self.c, epsilon=self.epsilon,
            ste=self.ste, head=self.head, hidden=self.hidden,
            emb_dim=self.emb_dim, lr=self.lr, optimizer=self.optimizer,
            max_epochs=self.max_epochs, patience=self.patience,
            batch_size=self.batch_size, seed=self.seed)

    def fit(self, X, y):
        if len(X) != len(y):
            raise ValueError(f"{len(X)} sequences vs {len(y)} tag sequences")
        if not X:
            raise ValueError("cannot fit on an empty corpus")
        raw = list(zip([list(s) for s in X], [list(t) for t in y]))
        token_vocab, tag_vocab = build_vocab(raw, self.min_count)
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(len(raw))
        n_dev = max(1, int(round(self.dev_fraction * len(raw))))
        if n_dev >= len(raw):
            n_dev = len(raw) - 1 or 1
        dev_idx = set(order[:n_dev].tolist())
        enc = [([token_vocab.encode(t) for t in toks],
                [tag_vocab.stoi[t] for t in tags]) for toks, tags in raw]
        splits = {
            "train": [enc[i] for i in range(len(enc)) if i not in dev_idx]
                     or [enc[0]],
            "dev": [enc[i] for i in sorted(dev_idx)],
        }
        dataset = Dataset(splits=splits, token_vocab=token_vocab,
                          tag_vocab=tag_vocab)
        self.report_, self.model_ = train(self._config(), dataset)
        self.dataset_ = dataset
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this LstmTagger instance is not fitted yet")

    def predict(self, X):
        self._check_fitted()
        out = []
        for tokens in X:
            ids = [self.dataset_.token_vocab.encode(t) for t in tokens]
            pred = self.model_.predict(ids)
            out.append([self.dataset_.tag_vocab.decode(t) for t in pred])
        return out

    def score(self, X, y):
        self._check_fitted()
        pred = self.predict(X)
        _, _, f1 = chunk_f1([list(t) for t in y], pred)
        return f1
