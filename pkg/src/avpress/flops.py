"""Analytic FLOPs accounting for the selector and a modeled backbone.

Counting convention, used consistently and exactly (integer arithmetic,
one multiply-add = 2 FLOPs, elementwise ops and normalizations ignored):

Backbone prefill over n tokens, L layers, width H, feed-forward width
H_ff (dense transformer estimate)::

    F = L * (8*n*H^2  +  4*n^2*H  +  4*n*H*H_ff)

i.e. QKVO projections, attention score and value products, and the
two-matrix feed-forward.

Selector cost per chunk with n_a audio tokens, n_hat_v retained video
tokens, token dim D, attention width h, score-head width m::

      2*n_a*D*h + 2*n_hat_v*D*h        input projections
    + layers * 4*(n_a + n_hat_v)*h^2   Q,K,V,O projections
    + layers * 4*n_a*n_hat_v*h         attention scores and values
    + 2*n_a*(h*m + m)                  scoring head
    + 2 * (2*n_p*D)                    frame saliency (two cosine score
                                       sets per chunk, one dot+norm pass
                                       over n_p tokens of dim D each)

multiplied by the number of chunks. These closed forms are normative for
every number this module reports; comparisons against other accounting
conventions are meaningful as ratios and orderings only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .audio_selector import SelectorConfig
from .errors import ParameterError
from .stream import ChunkedStream, CompressionConfig, retained_counts


@dataclass(frozen=True)
class BackboneSpec:
    """Dense-transformer stand-in for the downstream consumer of tokens."""

    layers: int
    hidden: int
    ffn: int | None = None  # defaults to 4 * hidden

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ParameterError("layers and hidden must be >= 1")
        if self.ffn is not None and self.ffn < 1:
            raise ParameterError("ffn must be >= 1 when set")

    @property
    def ffn_width(self) -> int:
        return 4 * self.hidden if self.ffn is None else self.ffn


@dataclass
class FlopsReport:
    retained_ratio: float
    selector_flops: int
    backbone_flops_full: int
    backbone_flops_compressed: int
    total_full: int
    total_compressed: int


def backbone_prefill_flops(spec: BackboneSpec, n_tokens: int) -> int:
    """Prefill cost of the modeled backbone over ``n_tokens``."""
    if n_tokens < 1:
        raise ParameterError("n_tokens must be >= 1")
    n, H, Hff = int(n_tokens), int(spec.hidden), int(spec.ffn_width)
    return int(spec.layers) * (8 * n * H * H + 4 * n * n * H + 4 * n * H * Hff)


def selector_flops(
    scfg: SelectorConfig, n_a: int, n_hat_v: int, chunks: int, n_p: int
) -> int:
    """Selection cost over a whole stream under the declared closed form."""
    if min(n_a, n_hat_v, chunks, n_p) < 1:
        raise ParameterError("all counts must be >= 1")
    D, h, m = int(scfg.dim), int(scfg.hidden), int(scfg.mlp_hidden)
    n_a, n_hat_v, n_p = int(n_a), int(n_hat_v), int(n_p)
    per_chunk = (
        2 * n_a * D * h
        + 2 * n_hat_v * D * h
        + scfg.layers * 4 * (n_a + n_hat_v) * h * h
        + scfg.layers * 4 * n_a * n_hat_v * h
        + 2 * n_a * (h * m + m)
        + 2 * (2 * n_p * D)
    )
    return int(chunks) * per_chunk


def report(
    stream: ChunkedStream,
    comp: CompressionConfig,
    scfg: SelectorConfig,
    backbone: BackboneSpec,
) -> FlopsReport:
    """Full-versus-compressed prefill accounting for one stream."""
    n_hat_p, n_hat_a = retained_counts(comp, stream.n_p, stream.n_a)
    n_full = stream.K * (2 * stream.n_p + stream.n_a)
    n_comp = stream.K * (2 * n_hat_p + n_hat_a)
    sel = selector_flops(scfg, stream.n_a, 2 * n_hat_p, stream.K, stream.n_p)
    full = backbone_prefill_flops(backbone, n_full)
    compressed = backbone_prefill_flops(backbone, n_comp)
    return FlopsReport(
        retained_ratio=(2 * n_hat_p + n_hat_a) / (2 * stream.n_p + stream.n_a),
        selector_flops=sel,
        backbone_flops_full=full,
        backbone_flops_compressed=compressed,
        total_full=full,
        total_compressed=compressed + sel,
    )


def write_report_csv(path, reports: list[FlopsReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "retained_ratio",
                "selector_flops",
                "backbone_full",
                "backbone_compressed",
                "total_full",
                "total_compressed",
            ]
        )
        for r in reports:
            writer.writerow(
                [
                    repr(r.retained_ratio),
                    r.selector_flops,
                    r.backbone_flops_full,
                    r.backbone_flops_compressed,
                    r.total_full,
                    r.total_compressed,
                ]
            )
