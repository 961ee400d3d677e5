"""Peephole LSTM forward pass with per-gate transform hooks.

The cell follows the rewritten state-transfer form:

    i = sig(U_i x + W_i h_prev + v_i*c_prev + b_i)
    f = sig(U_f x + W_f h_prev + v_f*c_prev + b_f)
    c = f*c_prev + i*tanh(U_C x + W_C h_prev + b_C)
    o = sig(U_o x + W_o h_prev + v_o*c + b_o)
    h = o * tanh(V_C c)

Peepholes v_i, v_f, v_o are diagonal (stored as vectors); V_C is a full
matrix initialized to the identity so the standard cell is the starting
point. Each gate may be passed through a transform: Gumbel noise on the
pre-activation (training only) and/or Round & Clip on the sigmoid output
(at evaluation always; during training only in train-time-quant mode).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .num_core import ShapeMismatchError, sigmoid
from .quantize import (
    GumbelCfg,
    QuantDecomp,
    RoundClipScheme,
    gumbel_gate,
    quant_decompose,
)

GATE_NAMES = ("input", "forget", "output")


@dataclass(frozen=True)
class GateSpec:
    """Transform configuration for a single gate."""

    gumbel: GumbelCfg | None = None
    round_clip: RoundClipScheme | None = None

    @property
    def is_identity(self) -> bool:
        return self.gumbel is None and self.round_clip is None


@dataclass(frozen=True)
class GateMode:
    """Per-gate transforms plus the phase in which Round & Clip applies.

    train_time_quant=False is the post-training path: Round & Clip fires
    only at evaluation. train_time_quant=True applies it inside every
    training forward as well, so the weights learn to absorb the residual.
    """

    input_gate: GateSpec = field(default_factory=GateSpec)
    forget_gate: GateSpec = field(default_factory=GateSpec)
    output_gate: GateSpec = field(default_factory=GateSpec)
    train_time_quant: bool = False

    @classmethod
    def identity(cls) -> "GateMode":
        return cls()

    def spec_for(self, gate: str) -> GateSpec:
        return {"input": self.input_gate, "forget": self.forget_gate,
                "output": self.output_gate}[gate]

    @property
    def is_identity(self) -> bool:
        return (self.input_gate.is_identity and self.forget_gate.is_identity
                and self.output_gate.is_identity)


@dataclass
class LstmDirParams:
    """All trainable arrays of one LSTM direction."""

    U_i: np.ndarray
    U_f: np.ndarray
    U_C: np.ndarray
    U_o: np.ndarray
    W_i: np.ndarray
    W_f: np.ndarray
    W_C: np.ndarray
    W_o: np.ndarray
    v_i: np.ndarray  # diagonal peephole, len hidden
    v_f: np.ndarray
    v_o: np.ndarray
    V_C: np.ndarray  # hidden x hidden, identity-initialized
    b_i: np.ndarray
    b_f: np.ndarray
    b_C: np.ndarray
    b_o: np.ndarray

    def named(self, prefix: str):
        for fld in fields(self):
            yield f"{prefix}.{fld.name}", getattr(self, fld.name)

    @property
    def hidden(self) -> int:
        return self.b_i.shape[0]

    @property
    def emb_dim(self) -> int:
        return self.U_i.shape[1]


@dataclass
class LstmParams:
    """Embedding table plus one or two LSTM directions."""

    embedding: np.ndarray  # vocab x emb_dim
    fwd: LstmDirParams
    bwd: LstmDirParams | None
    use_peepholes: bool = True

    def named(self):
        yield "embedding", self.embedding
        yield from self.fwd.named("fwd")
        if self.bwd is not None:
            yield from self.bwd.named("bwd")

    @property
    def bidirectional(self) -> bool:
        return self.bwd is not None

    @property
    def out_dim(self) -> int:
        h = self.fwd.hidden
        return 2 * h if self.bidirectional else h


def _init_dir(rng: np.random.Generator, emb_dim: int, hidden: int,
              peepholes: bool) -> LstmDirParams:
    s = 1.0 / np.sqrt(hidden)

    def mat(rows, cols):
        return rng.uniform(-s, s, size=(rows, cols))

    def peep():
        return rng.uniform(-s, s, size=hidden) if peepholes else np.zeros(hidden)

    return LstmDirParams(
        U_i=mat(hidden, emb_dim), U_f=mat(hidden, emb_dim),
        U_C=mat(hidden, emb_dim), U_o=mat(hidden, emb_dim),
        W_i=mat(hidden, hidden), W_f=mat(hidden, hidden),
        W_C=mat(hidden, hidden), W_o=mat(hidden, hidden),
        v_i=peep(), v_f=peep(), v_o=peep(),
        V_C=np.eye(hidden),
        b_i=np.zeros(hidden),
        b_f=np.ones(hidden),  # open forget gate at init
        b_C=np.zeros(hidden),
        b_o=np.zeros(hidden),
    )


def init_params(vocab: int, emb_dim: int, hidden: int, seed: int,
                bidirectional: bool = True, peepholes: str = "diag") -> LstmParams:
    """Uniform [-1/sqrt(hidden), +1/sqrt(hidden)] init, b_f = 1, V_C = I."""
    for name, d in (("vocab", vocab), ("emb_dim", emb_dim), ("hidden", hidden)):
        if d < 1:
            raise ValueError(f"{name} must be >= 1, got {d}")
    if peepholes not in ("diag", "none"):
        raise ValueError(f"peepholes must be 'diag' or 'none', got {peepholes!r}")
    use_peep = peepholes == "diag"
    rng = np.random.default_rng(seed)
    s = 1.0 / np.sqrt(hidden)
    embedding = rng.uniform(-s, s, size=(vocab, emb_dim))
    fwd = _init_dir(rng, emb_dim, hidden, use_peep)
    bwd = _init_dir(rng, emb_dim, hidden, use_peep) if bidirectional else None
    return LstmParams(embedding=embedding, fwd=fwd, bwd=bwd, use_peepholes=use_peep)


@dataclass
class StepCache:
    """Everything the backward pass needs from one timestep."""

    token: int
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i_raw: np.ndarray
    f_raw: np.ndarray
    o_raw: np.ndarray
    i: np.ndarray  # post-transform values actually used in the recurrence
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray  # candidate tanh(...)
    c: np.ndarray
    tanh_ah: np.ndarray  # tanh(V_C c)
    h: np.ndarray
    kind_i: str  # transform active on this pass: "raw" | "gumbel" | "rc"
    kind_f: str
    kind_o: str
    decomp_i: QuantDecomp | None = None
    decomp_f: QuantDecomp | None = None
    decomp_o: QuantDecomp | None = None


def _apply_gate(alpha: np.ndarray, spec: GateSpec, phase: str,
                train_time_quant: bool, rng: np.random.Generator | None):
    """Return (raw sigmoid value, used value, kind, decomp)."""
    raw = sigmoid(alpha)
    if phase == "train" and spec.gumbel is not None:
        if rng is None:
            raise ValueError("Gumbel gate transform requires an rng")
        return raw, gumbel_gate(alpha, spec.gumbel, rng), "gumbel", None
    if spec.round_clip is not None and (phase == "eval" or train_time_quant):
        dec = quant_decompose(raw, spec.round_clip)
        return raw, dec.f_bar, "rc", dec
    return raw, raw, "raw", None


def lstm_cell_forward(p: LstmDirParams, x_t: np.ndarray, h_prev: np.ndarray,
                      c_prev: np.ndarray, mode: GateMode, phase: str,
                      rng: np.random.Generator | None = None,
                      token: int = -1,
                      use_peepholes: bool = True) -> tuple[np.ndarray, np.ndarray, StepCache]:
    """One cell step; returns (h_t, c_t, cache)."""
    if x_t.shape[0] != p.emb_dim or h_prev.shape[0] != p.hidden:
        raise ShapeMismatchError(
            f"cell input shapes x={x_t.shape}, h={h_prev.shape} do not match "
            f"params (emb_dim={p.emb_dim}, hidden={p.hidden})"
        )
    peep_i = p.v_i * c_prev if use_peepholes else 0.0
    peep_f = p.v_f * c_prev if use_peepholes else 0.0

    alpha_i = p.U_i @ x_t + p.W_i @ h_prev + peep_i + p.b_i
    alpha_f = p.U_f @ x_t + p.W_f @ h_prev + peep_f + p.b_f
    i_raw, i_val, kind_i, dec_i = _apply_gate(
        alpha_i, mode.input_gate, phase, mode.train_time_quant, rng)
    f_raw, f_val, kind_f, dec_f = _apply_gate(
        alpha_f, mode.forget_gate, phase, mode.train_time_quant, rng)

    g = np.tanh(p.U_C @ x_t + p.W_C @ h_prev + p.b_C)
    c = f_val * c_prev + i_val * g

    peep_o = p.v_o * c if use_peepholes else 0.0
    alpha_o = p.U_o @ x_t + p.W_o @ h_prev + peep_o + p.b_o
    o_raw, o_val, kind_o, dec_o = _apply_gate(
        alpha_o, mode.output_gate, phase, mode.train_time_quant, rng)

    tanh_ah = np.tanh(p.V_C @ c)
    h = o_val * tanh_ah

    cache = StepCache(
        token=token, x=x_t, h_prev=h_prev, c_prev=c_prev,
        i_raw=i_raw, f_raw=f_raw, o_raw=o_raw,
        i=i_val, f=f_val, o=o_val, g=g, c=c, tanh_ah=tanh_ah, h=h,
        kind_i=kind_i, kind_f=kind_f, kind_o=kind_o,
        decomp_i=dec_i, decomp_f=dec_f, decomp_o=dec_o,
    )
    return h, c, cache


def run_direction(p: LstmDirParams, tokens, embedding: np.ndarray,
                  mode: GateMode, phase: str,
                  rng: np.random.Generator | None,
                  use_peepholes: bool) -> list[StepCache]:
    """Run one direction over a token-id sequence (already ordered)."""
    hidden = p.hidden
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    caches = []
    for tok in tokens:
        x = embedding[tok]
        h, c, cache = lstm_cell_forward(p, x, h, c, mode, phase, rng,
                                        token=tok, use_peepholes=use_peepholes)
        caches.append(cache)
    return caches


def bilstm_forward(params: LstmParams, tokens, mode: GateMode, phase: str,
                   rng: np.random.Generator | None = None):
    """Bidirectional forward; returns (hidden sequence tau x out_dim, caches).

    caches is (fwd_caches, bwd_caches); bwd_caches is ordered over the
    reversed sequence (bwd_caches[j] saw token tokens[tau-1-j]).
    """
    tokens = list(tokens)
    if not tokens:
        raise ValueError("cannot run the LSTM on an empty sequence")
    fwd_caches = run_direction(params.fwd, tokens, params.embedding, mode,
                               phase, rng, params.use_peepholes)
    if params.bwd is None:
        hseq = np.stack([c.h for c in fwd_caches])
        return hseq, (fwd_caches, None)
    bwd_caches = run_direction(params.bwd, tokens[::-1], params.embedding,
                               mode, phase, rng, params.use_peepholes)
    tau = len(tokens)
    hseq = np.stack([
        np.concatenate([fwd_caches[t].h, bwd_caches[tau - 1 - t].h])
        for t in range(tau)
    ])
    return hseq, (fwd_caches, bwd_caches)
