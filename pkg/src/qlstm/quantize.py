"""Parameter transforms: Round & Clip, Gumbel gate noise, binary weight quantization.

The Round & Clip quantizer maps a real value onto the fixed-point grid
{0, +-r, +-2r, ..., +-c}; with r=0.5, c=1.0 a sigmoid output lands on one of
{0, 0.5, 1}. The decomposition utility splits a gate vector f into its
quantized value f_bar and the residual delta_f = f - f_bar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .num_core import sigmoid


@dataclass(frozen=True)
class RoundClipScheme:
    """Step size r and symmetric clip bound c of the fixed-point grid."""

    r: float
    c: float

    def __post_init__(self):
        if not (self.r > 0 and self.c > 0):
            raise ValueError(f"r and c must be positive, got r={self.r}, c={self.c}")
        ratio = self.c / self.r
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"c must be an integer multiple of r so the top code is "
                f"representable; got r={self.r}, c={self.c}"
            )


@dataclass(frozen=True)
class GumbelCfg:
    """Temperature and seed for the stochastic gate transform."""

    epsilon: float
    rng_seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class QuantDecomp:
    """f = f_bar + delta_f split of a gate vector."""

    f_bar: np.ndarray
    delta_f: np.ndarray


def round_clip(x, scheme: RoundClipScheme):
    """clip(round(x / r) * r, -c, c), rounding halves away from zero.

    Accepts scalars or arrays; returns the same shape.
    """
    x = np.asarray(x, dtype=np.float64)
    q = np.sign(x) * np.floor(np.abs(x) / scheme.r + 0.5) * scheme.r
    q = np.clip(q, -scheme.c, scheme.c)
    if q.ndim == 0:
        return float(q)
    return q


def quant_decompose(f: np.ndarray, scheme: RoundClipScheme) -> QuantDecomp:
    """Split a gate vector into quantized value and residual (exact sum)."""
    f = np.asarray(f, dtype=np.float64)
    f_bar = round_clip(f, scheme)
    return QuantDecomp(f_bar=f_bar, delta_f=f - f_bar)


_U_CLAMP = 1e-12


def gumbel_gate(alpha: np.ndarray, cfg: GumbelCfg, rng: np.random.Generator) -> np.ndarray:
    """Stochastic sharpened gate: sigmoid((alpha + logit(u)) / epsilon).

    u is drawn i.i.d. Uniform(0,1) per element and clamped away from {0,1}
    to keep the logs finite. As epsilon shrinks the output concentrates on
    {0, 1} with P(output -> 1) = sigmoid(alpha).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    u = rng.uniform(size=alpha.shape)
    u = np.clip(u, _U_CLAMP, 1.0 - _U_CLAMP)
    return sigmoid((alpha + np.log(u) - np.log1p(-u)) / cfg.epsilon)


def binary_weight_quantize(W: np.ndarray) -> np.ndarray:
    """First-order residual quantization: alpha * sign(W), alpha = mean |W|.

    alpha is the least-squares optimal scalar for the fixed sign pattern;
    sign(0) is taken as +1.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.size == 0:
        raise ValueError("cannot quantize an empty matrix")
    alpha = np.mean(np.abs(W))
    sign = np.where(W >= 0, 1.0, -1.0)
    return alpha * sign
