"""Bi-LSTM sequence tagger: forward, loss, gradients, decoding.

Combines the embedding table, the (bidirectional) LSTM and an output head
(CRF by default, plain per-step softmax selectable). Optionally applies
first-order binary quantization to all U/V/W matrices: at evaluation
always, and during training as well in train-time-quant mode (gradients
then flow straight through to the full-precision master weights).
"""

from __future__ import annotations

import copy

import numpy as np

from .backprop import lstm_backward_direction, zero_grads_dir
from .crf import CrfParams, crf_nll, init_crf, softmax_head_nll, viterbi_decode
from .lstm import GateMode, LstmDirParams, LstmParams, bilstm_forward, init_params
from .quantize import binary_weight_quantize

HEAD_CRF = "crf"
HEAD_SOFTMAX = "softmax"

_QUANT_FIELDS = ("U_i", "U_f", "U_C", "U_o", "W_i", "W_f", "W_C", "W_o",
                 "v_i", "v_f", "v_o", "V_C")


def _quantize_dir(p: LstmDirParams) -> LstmDirParams:
    q = copy.copy(p)
    for name in _QUANT_FIELDS:
        arr = getattr(p, name)
        if arr.size and np.any(arr):
            setattr(q, name, binary_weight_quantize(arr))
    return q


class SequenceTagger:
    """Trainable tagging model with configurable gate/weight quantization."""

    def __init__(self, lstm: LstmParams, head: CrfParams,
                 gate_mode: GateMode | None = None, head_type: str = HEAD_CRF,
                 ste: str = "full", quantize_weights: bool = False):
        if head_type not in (HEAD_CRF, HEAD_SOFTMAX):
            raise ValueError(f"unknown head type {head_type!r}")
        self.lstm = lstm
        self.head = head
        self.gate_mode = gate_mode if gate_mode is not None else GateMode.identity()
        self.head_type = head_type
        self.ste = ste
        self.quantize_weights = quantize_weights

    @classmethod
    def build(cls, vocab: int, emb_dim: int, hidden: int, n_tags: int,
              seed: int, gate_mode: GateMode | None = None,
              head_type: str = HEAD_CRF, ste: str = "full",
              quantize_weights: bool = False, bidirectional: bool = True,
              peepholes: str = "diag") -> "SequenceTagger":
        lstm = init_params(vocab, emb_dim, hidden, seed,
                           bidirectional=bidirectional, peepholes=peepholes)
        rng = np.random.default_rng(seed + 1)
        head = init_crf(lstm.out_dim, n_tags, rng)
        return cls(lstm, head, gate_mode, head_type, ste, quantize_weights)

    # -- parameter plumbing ------------------------------------------------

    def all_params(self):
        """(name, array) pairs for every trainable parameter."""
        pairs = list(self.lstm.named())
        if not self.lstm.use_peepholes:
            pairs = [(n, a) for n, a in pairs
                     if not n.split(".")[-1].startswith("v_")]
        if self.head_type == HEAD_CRF:
            pairs += list(self.head.named())
        else:
            pairs += [("crf.emit_W", self.head.emit_W),
                      ("crf.emit_b", self.head.emit_b)]
        return pairs

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.all_params()}

    def clone(self) -> "SequenceTagger":
        return copy.deepcopy(self)

    def _effective_lstm(self, phase: str) -> LstmParams:
        if not self.quantize_weights:
            return self.lstm
        if phase == "eval" or self.gate_mode.train_time_quant:
            q = copy.copy(self.lstm)
            q.fwd = _quantize_dir(self.lstm.fwd)
            if self.lstm.bwd is not None:
                q.bwd = _quantize_dir(self.lstm.bwd)
            return q
        return self.lstm

    # -- forward / loss ----------------------------------------------------

    def forward(self, tokens, phase: str, rng: np.random.Generator | None = None):
        """Returns (emissions tau x tags, hseq, caches, effective params)."""
        eff = self._effective_lstm(phase)
        hseq, caches = bilstm_forward(eff, tokens, self.gate_mode, phase, rng)
        emissions = hseq @ self.head.emit_W.T + self.head.emit_b
        return emissions, hseq, caches, eff

    def sentence_loss(self, tokens, tags, phase: str = "train",
                      rng: np.random.Generator | None = None) -> float:
        emissions, _, _, _ = self.forward(tokens, phase, rng)
        if self.head_type == HEAD_CRF:
            loss, _, _ = crf_nll(emissions, tags, self.head)
        else:
            loss, _ = softmax_head_nll(emissions, tags)
        return loss

    def sentence_loss_and_grads(self, tokens, tags, phase: str = "train",
                                rng: np.random.Generator | None = None):
        """Returns (loss, grads dict, caches)."""
        emissions, hseq, caches, eff = self.forward(tokens, phase, rng)
        if self.head_type == HEAD_CRF:
            loss, grad_emis, head_grads = crf_nll(emissions, tags, self.head)
        else:
            loss, grad_emis = softmax_head_nll(emissions, tags)
            head_grads = {}

        grads = self.zero_grads()
        grads["crf.emit_W"] += grad_emis.T @ hseq
        grads["crf.emit_b"] += grad_emis.sum(axis=0)
        for name, g in head_grads.items():
            grads[f"crf.{name}"] += g

        d_hseq = grad_emis @ self.head.emit_W  # tau x out_dim
        tau = len(tokens)
        hidden = eff.fwd.hidden
        use_peep = eff.use_peepholes

        fwd_caches, bwd_caches = caches
        dh_fwd = [d_hseq[t, :hidden] for t in range(tau)]
        g_fwd, dx_fwd = lstm_backward_direction(
            eff.fwd, fwd_caches, dh_fwd, self.gate_mode, self.ste, "fwd",
            use_peepholes=use_peep)
        self._accumulate(grads, g_fwd)
        demb = grads["embedding"]
        for t, tok in enumerate(tokens):
            demb[tok] += dx_fwd[t]

        if bwd_caches is not None:
            rev = list(tokens)[::-1]
            dh_bwd = [d_hseq[tau - 1 - j, hidden:] for j in range(tau)]
            g_bwd, dx_bwd = lstm_backward_direction(
                eff.bwd, bwd_caches, dh_bwd, self.gate_mode, self.ste, "bwd",
                use_peepholes=use_peep)
            self._accumulate(grads, g_bwd)
            for j, tok in enumerate(rev):
                demb[tok] += dx_bwd[j]

        return loss, grads, caches

    @staticmethod
    def _accumulate(grads: dict, extra: dict):
        for name, g in extra.items():
            if name in grads:
                grads[name] += g

    def batch_loss(self, batch, phase: str = "train",
                   rng: np.random.Generator | None = None) -> float:
        total = 0.0
        for tokens, tags in batch:
            total += self.sentence_loss(tokens, tags, phase, rng)
        return total / len(batch)

    def batch_loss_and_grads(self, batch, phase: str = "train",
                             rng: np.random.Generator | None = None):
        """Mean loss and mean gradients over a batch of (tokens, tags)."""
        grads = self.zero_grads()
        total = 0.0
        all_caches = []
        for tokens, tags in batch:
            loss, g, caches = self.sentence_loss_and_grads(tokens, tags, phase, rng)
            total += loss
            for name in grads:
                grads[name] += g[name]
            all_caches.append(caches)
        n = len(batch)
        for name in grads:
            grads[name] /= n
        return total / n, grads, all_caches

    # -- inference ---------------------------------------------------------

    def predict(self, tokens) -> list[int]:
        emissions, _, _, _ = self.forward(tokens, phase="eval")
        if self.head_type == HEAD_CRF:
            return viterbi_decode(emissions, self.head)
        return [int(np.argmax(emissions[t])) for t in range(len(tokens))]
