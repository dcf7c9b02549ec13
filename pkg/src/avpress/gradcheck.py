"""Finite-difference verification of the selector's analytic gradients.

Freezes a seeded micro problem (3 audio tokens, 2 video anchors, D=4,
h=4, one head), fixes an upstream gradient G, and compares the
straight-through backward pass against central differences of

    f(theta) = sum_j <G_j, z_j> * s_j(theta)

which is exactly the differentiable part of the surrogate objective: the
mask is out of the picture, so every parameter's gradient must match to
finite-difference accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_selector import (
    SelectorConfig,
    SelectorParams,
    backward_ste,
    init_params,
    run_selector,
)
from .numerics import finite_diff_grad
from .stream import CompressionConfig


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    per_tensor: dict[str, float]

    def passed(self, tolerance: float = 1e-5) -> bool:
        return self.max_rel_err < tolerance


def micro_case(seed: int):
    """Seeded micro problem: (audio, anchors, selector cfg, comp cfg, G)."""
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    cfg = SelectorConfig(dim=4, hidden=4, heads=1, mlp_hidden=2, layers=1)
    audio = rng.standard_normal((3, 4))
    anchors = rng.standard_normal((2, 4))
    upstream = rng.standard_normal((3, 4))
    comp = CompressionConfig(rho_v=0.0, rho_a=0.34)  # keeps 2 of 3 audio tokens
    return audio, anchors, cfg, comp, upstream


def gradient_check(seed: int = 7, step: float = 1e-5) -> GradCheckResult:
    """Max relative error between analytic and finite-difference gradients."""
    audio, anchors, cfg, comp, upstream = micro_case(seed)
    params = init_params(cfg, seed)
    out = run_selector(audio, anchors, params, cfg, comp)
    analytic = backward_ste(out, params, upstream).to_vector()

    coeff = (upstream * audio).sum(axis=1)

    def objective(vec: np.ndarray) -> float:
        p = SelectorParams.from_vector(cfg, vec)
        o = run_selector(audio, anchors, p, cfg, comp)
        return float(np.dot(coeff, o.scores))

    numeric = finite_diff_grad(objective, params.to_vector(), h=step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    rel = np.abs(analytic - numeric) / denom

    per_tensor: dict[str, float] = {}
    worst_param = ""
    worst = -1.0
    offset = 0
    for name, t in params.named_tensors():
        chunk = rel[offset : offset + t.size]
        per_tensor[name] = float(chunk.max())
        if per_tensor[name] > worst:
            worst = per_tensor[name]
            worst_param = name
        offset += t.size
    return GradCheckResult(
        max_rel_err=float(rel.max()), worst_param=worst_param, per_tensor=per_tensor
    )
