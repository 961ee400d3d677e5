"""Hand-derived backpropagation through time for the peephole LSTM.

The recurrence is chained in full: cell-state error accumulates
contributions from the next step's forget path, the next step's input and
forget peepholes, the current output-gate peephole, and the hidden path
through V_C. No truncation.

Gradient flow through a Round & Clip gate transform is configurable:
"full" treats the quantizer as identity (straight-through, derivative uses
the raw sigmoid value), "quantized" uses the quantized value in the local
sigmoid derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lstm import GateMode, LstmDirParams, StepCache

STE_FULL = "full"
STE_QUANTIZED = "quantized"


def _gate_deriv(value_raw: np.ndarray, value_used: np.ndarray, kind: str,
                spec, ste: str) -> np.ndarray:
    """d(gate)/d(pre-activation) under the configured backward rule."""
    if kind == "raw":
        return value_raw * (1.0 - value_raw)
    if kind == "gumbel":
        # gate = sigmoid((alpha + noise)/eps) is differentiable as-is
        return value_used * (1.0 - value_used) / spec.gumbel.epsilon
    if kind == "rc":
        if ste == STE_QUANTIZED:
            return value_used * (1.0 - value_used)
        return value_raw * (1.0 - value_raw)
    raise ValueError(f"unknown gate kind {kind!r}")


def zero_grads_dir(p: LstmDirParams, prefix: str) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in p.named(prefix)}


def lstm_backward_direction(p: LstmDirParams, caches: list[StepCache],
                            dh_ext: list[np.ndarray], mode: GateMode,
                            ste: str, prefix: str,
                            use_peepholes: bool = True):
    """BPTT over one direction.

    dh_ext[t] is the loss gradient w.r.t. this direction's hidden output at
    step t (same ordering as caches). Returns (grads dict keyed
    "<prefix>.<field>", dx list of gradients w.r.t. the embedded inputs).
    """
    if len(caches) != len(dh_ext):
        raise ValueError(
            f"cache length {len(caches)} != loss-grad length {len(dh_ext)}")
    g = zero_grads_dir(p, prefix)
    hidden = p.hidden
    dh_next = np.zeros(hidden)
    dc_next = np.zeros(hidden)
    dx_list: list[np.ndarray | None] = [None] * len(caches)

    for t in range(len(caches) - 1, -1, -1):
        cc = caches[t]
        dh = dh_ext[t] + dh_next

        # h = o * tanh(V_C c)
        do = dh * cc.tanh_ah
        da_h = dh * cc.o * (1.0 - cc.tanh_ah ** 2)
        g[f"{prefix}.V_C"] += np.outer(da_h, cc.c)
        dc = p.V_C.T @ da_h + dc_next

        # output gate (peephole on c_t feeds back into dc)
        dalpha_o = do * _gate_deriv(cc.o_raw, cc.o, cc.kind_o,
                                    mode.output_gate, ste)
        if use_peepholes:
            dc = dc + p.v_o * dalpha_o

        # c = f*c_prev + i*g
        df = dc * cc.c_prev
        di = dc * cc.g
        dg = dc * cc.i
        dalpha_f = df * _gate_deriv(cc.f_raw, cc.f, cc.kind_f,
                                    mode.forget_gate, ste)
        dalpha_i = di * _gate_deriv(cc.i_raw, cc.i, cc.kind_i,
                                    mode.input_gate, ste)
        dalpha_g = dg * (1.0 - cc.g ** 2)

        dc_prev = dc * cc.f
        if use_peepholes:
            dc_prev = dc_prev + p.v_i * dalpha_i + p.v_f * dalpha_f
            g[f"{prefix}.v_i"] += dalpha_i * cc.c_prev
            g[f"{prefix}.v_f"] += dalpha_f * cc.c_prev
            g[f"{prefix}.v_o"] += dalpha_o * cc.c

        g[f"{prefix}.U_i"] += np.outer(dalpha_i, cc.x)
        g[f"{prefix}.U_f"] += np.outer(dalpha_f, cc.x)
        g[f"{prefix}.U_C"] += np.outer(dalpha_g, cc.x)
        g[f"{prefix}.U_o"] += np.outer(dalpha_o, cc.x)
        g[f"{prefix}.W_i"] += np.outer(dalpha_i, cc.h_prev)
        g[f"{prefix}.W_f"] += np.outer(dalpha_f, cc.h_prev)
        g[f"{prefix}.W_C"] += np.outer(dalpha_g, cc.h_prev)
        g[f"{prefix}.W_o"] += np.outer(dalpha_o, cc.h_prev)
        g[f"{prefix}.b_i"] += dalpha_i
        g[f"{prefix}.b_f"] += dalpha_f
        g[f"{prefix}.b_C"] += dalpha_g
        g[f"{prefix}.b_o"] += dalpha_o

        dx_list[t] = (p.U_i.T @ dalpha_i + p.U_f.T @ dalpha_f
                      + p.U_C.T @ dalpha_g + p.U_o.T @ dalpha_o)
        dh_next = (p.W_i.T @ dalpha_i + p.W_f.T @ dalpha_f
                   + p.W_C.T @ dalpha_g + p.W_o.T @ dalpha_o)
        dc_next = dc_prev

    return g, dx_list


@dataclass
class GateDecompStats:
    """Per-gate norms of the two gradient-factor terms plus residual size."""

    norm_term1: float
    norm_term2: float
    mean_abs_delta: float


def decompose_gate_gradient(caches: list[StepCache]) -> dict[str, GateDecompStats]:
    """Split the sigmoid-derivative factor of each quantized gate.

    For a gate value f = f_bar + delta, the factor f(1-f) splits exactly as
    f_bar(1-f_bar) + delta*(1-2*f_bar-delta); the first term is what a
    quantized-value backward would use, the second vanishes as the residual
    shrinks. Raises if the caches carry no quantization decomposition.
    """
    out = {}
    for gate, raw_attr, dec_attr in (
        ("input", "i_raw", "decomp_i"),
        ("forget", "f_raw", "decomp_f"),
        ("output", "o_raw", "decomp_o"),
    ):
        decs = [getattr(c, dec_attr) for c in caches]
        if all(d is None for d in decs):
            continue
        if any(d is None for d in decs):
            raise ValueError(f"gate {gate!r}: decomposition missing at some steps")
        raw = np.concatenate([getattr(c, raw_attr) for c in caches])
        f_bar = np.concatenate([d.f_bar for d in decs])
        delta = np.concatenate([d.delta_f for d in decs])
        term1 = f_bar * (1.0 - f_bar)
        term2 = delta * (1.0 - 2.0 * f_bar - delta)
        full = raw * (1.0 - raw)
        err = np.max(np.abs(full - (term1 + term2)))
        if err > 1e-10:
            raise AssertionError(
                f"gate-factor decomposition identity violated: max err {err:g}")
        out[gate] = GateDecompStats(
            norm_term1=float(np.linalg.norm(term1)),
            norm_term2=float(np.linalg.norm(term2)),
            mean_abs_delta=float(np.mean(np.abs(delta))),
        )
    if not out:
        raise ValueError("no quantized gates in these caches")
    return out


def residual_trend(mean_abs_delta_series: list[float]) -> dict:
    """Summarize a per-epoch residual series; logged, never asserted."""
    if len(mean_abs_delta_series) < 2:
        raise ValueError("need at least two epochs of residual statistics")
    return {
        "series": list(mean_abs_delta_series),
        "decreased": mean_abs_delta_series[-1] < mean_abs_delta_series[0],
    }


def finite_diff_check(model, batch, eps: float = 1e-4) -> float:
    """Central finite differences over every parameter entry.

    Only meaningful in Identity gate mode (the quantizers are flat almost
    everywhere); refuses otherwise. Returns the max relative error between
    the analytic gradient and (L(p+eps) - L(p-eps)) / (2 eps).

    The default step balances truncation error against floating-point
    cancellation: near-zero gradient entries hit the 1e-8 denominator
    floor, where the ~1e-16*L/eps evaluation noise dominates if eps is
    made much smaller.
    """
    if not model.gate_mode.is_identity:
        raise ValueError("gradient checking requires Identity gate mode")
    if getattr(model, "quantize_weights", False):
        raise ValueError("gradient checking requires full-precision weights")
    _, grads, _ = model.batch_loss_and_grads(batch)
    max_rel = 0.0
    for name, arr in model.all_params():
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            lp = model.batch_loss(batch)
            arr[idx] = orig - eps
            lm = model.batch_loss(batch)
            arr[idx] = orig
            numeric = (lp - lm) / (2.0 * eps)
            analytic = grads[name][idx]
            denom = max(abs(analytic), abs(numeric), 1e-8)
            rel = abs(analytic - numeric) / denom
            if rel > max_rel:
                max_rel = rel
    return max_rel
