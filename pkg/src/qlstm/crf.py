"""Output heads: linear-chain CRF and a per-step softmax classifier.

The CRF scores a tag path as
start[y_1] + sum_t emis[t, y_t] + sum_t trans[y_t, y_{t+1}] + stop[y_tau];
likelihood uses the forward algorithm in log space, gradients come from
forward-backward marginals, decoding is Viterbi with ties broken toward
the lower tag id.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .num_core import logsumexp, softmax


@dataclass
class CrfParams:
    emit_W: np.ndarray  # tags x in_dim projection from the LSTM output
    emit_b: np.ndarray  # tags
    trans: np.ndarray   # tags x tags, trans[i, j] scores i -> j
    start: np.ndarray   # tags
    stop: np.ndarray    # tags

    def named(self, prefix: str = "crf"):
        for fld in fields(self):
            yield f"{prefix}.{fld.name}", getattr(self, fld.name)

    @property
    def n_tags(self) -> int:
        return self.trans.shape[0]


def init_crf(in_dim: int, n_tags: int, rng: np.random.Generator) -> CrfParams:
    if n_tags < 1:
        raise ValueError(f"n_tags must be >= 1, got {n_tags}")
    s = 1.0 / np.sqrt(max(in_dim, 1))
    return CrfParams(
        emit_W=rng.uniform(-s, s, size=(n_tags, in_dim)),
        emit_b=np.zeros(n_tags),
        trans=rng.uniform(-0.1, 0.1, size=(n_tags, n_tags)),
        start=np.zeros(n_tags),
        stop=np.zeros(n_tags),
    )


def _forward_alphas(emissions: np.ndarray, p: CrfParams) -> np.ndarray:
    tau = emissions.shape[0]
    alphas = np.empty_like(emissions)
    alphas[0] = p.start + emissions[0]
    for t in range(1, tau):
        alphas[t] = logsumexp(alphas[t - 1][:, None] + p.trans, axis=0) + emissions[t]
    return alphas


def crf_log_partition(emissions: np.ndarray, p: CrfParams) -> float:
    """log sum over all tag paths of exp(path score)."""
    emissions = np.asarray(emissions, dtype=np.float64)
    if emissions.ndim != 2 or emissions.shape[0] < 1:
        raise ValueError(f"emissions must be (tau, tags) with tau >= 1, "
                         f"got shape {emissions.shape}")
    alphas = _forward_alphas(emissions, p)
    return float(logsumexp(alphas[-1] + p.stop))


def gold_score(emissions: np.ndarray, tags, p: CrfParams) -> float:
    tags = list(tags)
    score = p.start[tags[0]] + emissions[0, tags[0]]
    for t in range(1, len(tags)):
        score += p.trans[tags[t - 1], tags[t]] + emissions[t, tags[t]]
    return float(score + p.stop[tags[-1]])


def crf_nll(emissions: np.ndarray, tags, p: CrfParams):
    """Negative log likelihood of the gold path, with exact gradients.

    Returns (loss, grad_emissions, grads) where grads maps the CrfParams
    field names trans/start/stop to their gradients. loss >= 0 always.
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    tags = list(tags)
    tau, n_tags = emissions.shape
    if len(tags) != tau:
        raise ValueError(f"gold length {len(tags)} != sequence length {tau}")
    if any(t < 0 or t >= n_tags for t in tags):
        raise ValueError(f"tag id out of range [0, {n_tags}) in {tags}")

    alphas = _forward_alphas(emissions, p)
    log_z = float(logsumexp(alphas[-1] + p.stop))

    betas = np.empty_like(emissions)
    betas[-1] = p.stop
    for t in range(tau - 2, -1, -1):
        betas[t] = logsumexp(p.trans + emissions[t + 1] + betas[t + 1], axis=1)

    # unary marginals
    marg = np.exp(alphas + betas - log_z)
    grad_emis = marg.copy()
    grad_trans = np.zeros_like(p.trans)
    for t in range(tau - 1):
        pair = np.exp(alphas[t][:, None] + p.trans + emissions[t + 1]
                      + betas[t + 1] - log_z)
        grad_trans += pair
    grad_start = marg[0].copy()
    grad_stop = marg[-1].copy()

    # subtract gold counts
    for t, y in enumerate(tags):
        grad_emis[t, y] -= 1.0
    for t in range(tau - 1):
        grad_trans[tags[t], tags[t + 1]] -= 1.0
    grad_start[tags[0]] -= 1.0
    grad_stop[tags[-1]] -= 1.0

    loss = log_z - gold_score(emissions, tags, p)
    grads = {"trans": grad_trans, "start": grad_start, "stop": grad_stop}
    return loss, grad_emis, grads


def viterbi_decode(emissions: np.ndarray, p: CrfParams) -> list[int]:
    """Highest-scoring tag path; argmax ties resolve to the lower tag id."""
    emissions = np.asarray(emissions, dtype=np.float64)
    tau = emissions.shape[0]
    if tau < 1:
        raise ValueError("cannot decode an empty sequence")
    score = p.start + emissions[0]
    back = np.zeros((tau, p.n_tags), dtype=np.intp)
    for t in range(1, tau):
        cand = score[:, None] + p.trans  # cand[i, j]: best-so-far i -> j
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(p.n_tags)] + emissions[t]
    last = int(np.argmax(score + p.stop))
    path = [last]
    for t in range(tau - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    return path[::-1]


def softmax_head_nll(logits: np.ndarray, tags):
    """Mean per-step cross-entropy; returns (loss, grad_logits).

    grad is the gradient of the mean loss, already divided by tau.
    """
    logits = np.asarray(logits, dtype=np.float64)
    tags = list(tags)
    tau = logits.shape[0]
    if len(tags) != tau:
        raise ValueError(f"gold length {len(tags)} != sequence length {tau}")
    probs = softmax(logits)
    loss = -float(np.mean(np.log(probs[np.arange(tau), tags])))
    grad = probs.copy()
    grad[np.arange(tau), tags] -= 1.0
    return loss, grad / tau
