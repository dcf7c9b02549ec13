"""Trainable audio-token selector guided by retained video anchors.

Audio tokens act as queries in a lightweight multi-head cross-attention
over the pruned video tokens of the same chunk, yielding context-aware
audio representations. A small two-layer scoring head with a sigmoid maps
each contextual row to a saliency score in (0, 1), and a hard top-k over
the scores picks which audio tokens survive.

The hard selection is non-differentiable, so training uses a
straight-through estimator: forward passes selected tokens unchanged
(z_hat_j = m_j * z_j), and backward treats d m_j / d s_j as 1 for every
token, selected or not. From the scores down, gradients are exact
reverse-mode derivatives; token embeddings are treated as constants and
only selector parameters receive gradients.

Checkpoint format ``OTP1`` (little-endian): magic ``4F 54 50 31``, u32
fields dim, hidden, heads, mlp_hidden, layers, then every named tensor in
the order of ``SelectorParams.named_tensors`` as row-major IEEE-754
binary64.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, ShapeError, StateError
from .numerics import as_matrix, topk_indices
from .stream import Chunk, CompressionConfig, retained_count

PARAMS_MAGIC = b"OTP1"


@dataclass(frozen=True)
class SelectorConfig:
    dim: int  # backbone embedding dimension D
    hidden: int  # internal attention width h
    heads: int
    mlp_hidden: int  # scoring head hidden width
    layers: int = 1

    def __post_init__(self):
        if min(self.dim, self.hidden, self.heads, self.mlp_hidden, self.layers) < 1:
            raise ParameterError("all selector dimensions must be >= 1")
        if self.hidden % self.heads != 0:
            raise ParameterError(
                f"hidden={self.hidden} not divisible by heads={self.heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


@dataclass
class AttentionLayerParams:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray


@dataclass
class SelectorParams:
    """All learnable weights; also reused as the gradient container.

    Affine weights are stored (fan_in, fan_out) and applied as x @ w + b.
    """

    audio_proj_w: np.ndarray  # (D, h)
    audio_proj_b: np.ndarray  # (h,)
    video_proj_w: np.ndarray  # (D, h)
    video_proj_b: np.ndarray  # (h,)
    attn: list[AttentionLayerParams]
    score_w1: np.ndarray  # (h, m)
    score_b1: np.ndarray  # (m,)
    score_w2: np.ndarray  # (m, 1)
    score_b2: np.ndarray  # (1,)

    def named_tensors(self):
        """Canonical (name, tensor) order used by init, I/O, and flattening."""
        yield "audio_proj_w", self.audio_proj_w
        yield "audio_proj_b", self.audio_proj_b
        yield "video_proj_w", self.video_proj_w
        yield "video_proj_b", self.video_proj_b
        for i, layer in enumerate(self.attn):
            yield f"attn{i}.wq", layer.wq
            yield f"attn{i}.bq", layer.bq
            yield f"attn{i}.wk", layer.wk
            yield f"attn{i}.bk", layer.bk
            yield f"attn{i}.wv", layer.wv
            yield f"attn{i}.bv", layer.bv
            yield f"attn{i}.wo", layer.wo
            yield f"attn{i}.bo", layer.bo
        yield "score_w1", self.score_w1
        yield "score_b1", self.score_b1
        yield "score_w2", self.score_w2
        yield "score_b2", self.score_b2

    def to_vector(self) -> np.ndarray:
        return np.concatenate([t.ravel() for _, t in self.named_tensors()])

    @classmethod
    def zeros(cls, cfg: SelectorConfig) -> "SelectorParams":
        d, h, m = cfg.dim, cfg.hidden, cfg.mlp_hidden
        return cls(
            audio_proj_w=np.zeros((d, h)),
            audio_proj_b=np.zeros(h),
            video_proj_w=np.zeros((d, h)),
            video_proj_b=np.zeros(h),
            attn=[
                AttentionLayerParams(
                    wq=np.zeros((h, h)),
                    bq=np.zeros(h),
                    wk=np.zeros((h, h)),
                    bk=np.zeros(h),
                    wv=np.zeros((h, h)),
                    bv=np.zeros(h),
                    wo=np.zeros((h, h)),
                    bo=np.zeros(h),
                )
                for _ in range(cfg.layers)
            ],
            score_w1=np.zeros((h, m)),
            score_b1=np.zeros(m),
            score_w2=np.zeros((m, 1)),
            score_b2=np.zeros(1),
        )

    @classmethod
    def from_vector(cls, cfg: SelectorConfig, vec: np.ndarray) -> "SelectorParams":
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.shape[0] != param_count(cfg):
            raise ShapeError(
                f"expected {param_count(cfg)} parameters, got {vec.shape[0]}"
            )
        out = cls.zeros(cfg)
        offset = 0
        for _, t in out.named_tensors():
            t[...] = vec[offset : offset + t.size].reshape(t.shape)
            offset += t.size
        return out


def param_count(cfg: SelectorConfig) -> int:
    """Closed-form learnable-parameter count for a selector config."""
    d, h, m = cfg.dim, cfg.hidden, cfg.mlp_hidden
    return 2 * (d * h + h) + cfg.layers * 4 * (h * h + h) + (h * m + m) + (m + 1)


def init_params(cfg: SelectorConfig, seed: int) -> SelectorParams:
    """Seeded initialization: weights uniform(+-1/sqrt(fan_in)), biases zero.

    Only weight matrices consume randomness, in ``named_tensors`` order,
    from a Philox generator keyed by the seed.
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    params = SelectorParams.zeros(cfg)
    for _, t in params.named_tensors():
        if t.ndim == 2:
            bound = 1.0 / math.sqrt(t.shape[0])
            t[...] = rng.uniform(-bound, bound, size=t.shape)
    return params


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, h = x.shape
    return x.reshape(n, heads, h // heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    heads, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, heads * d)


def _softmax_last(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class _LayerTape:
    __slots__ = ("q_in", "qh", "kh", "vh", "p", "ctx")

    def __init__(self, q_in, qh, kh, vh, p, ctx):
        self.q_in = q_in
        self.qh = qh
        self.kh = kh
        self.vh = vh
        self.p = p
        self.ctx = ctx


class _Tape:
    """Intermediates of one forward pass, consumed by the backward pass."""

    __slots__ = (
        "cfg", "guide", "audio", "anchors", "xa", "xv", "layers",
        "contextual", "r_pre", "r", "s_raw",
    )

    def __init__(self, **kw):
        for k, v in kw.items():
            setattr(self, k, v)


@dataclass
class SelectorOutput:
    scores: np.ndarray  # (n_a,), strictly inside (0, 1)
    mask: np.ndarray  # (n_a,) int64, exactly n_hat_a ones
    kept_audio: np.ndarray  # strictly increasing indices
    contextual: np.ndarray  # (n_a, hidden)
    cache: _Tape | None = field(default=None, repr=False, compare=False)


def _attend_forward(
    audio: np.ndarray,
    anchors: np.ndarray,
    params: SelectorParams,
    cfg: SelectorConfig,
    guide: str,
) -> _Tape:
    if audio.shape[1] != cfg.dim or anchors.shape[1] != cfg.dim:
        raise ShapeError(
            f"token dim mismatch: audio {audio.shape[1]}, anchors {anchors.shape[1]}, "
            f"config {cfg.dim}"
        )
    if len(params.attn) != cfg.layers:
        raise ShapeError(
            f"params carry {len(params.attn)} attention layers, config says {cfg.layers}"
        )
    xa = audio @ params.audio_proj_w + params.audio_proj_b
    if guide == "video":
        xv = anchors @ params.video_proj_w + params.video_proj_b
    else:  # self-guided ablation: the audio projection feeds keys/values too
        xv = xa
    scale = 1.0 / math.sqrt(cfg.head_dim)
    layer_tapes = []
    q_in = xa
    for layer in params.attn:
        q = q_in @ layer.wq + layer.bq
        k = xv @ layer.wk + layer.bk
        v = xv @ layer.wv + layer.bv
        qh = _split_heads(q, cfg.heads)
        kh = _split_heads(k, cfg.heads)
        vh = _split_heads(v, cfg.heads)
        p = _softmax_last(qh @ kh.transpose(0, 2, 1) * scale)
        ctx = _merge_heads(p @ vh)
        out = ctx @ layer.wo + layer.bo
        layer_tapes.append(_LayerTape(q_in=q_in, qh=qh, kh=kh, vh=vh, p=p, ctx=ctx))
        q_in = out
    r_pre = q_in @ params.score_w1 + params.score_b1
    r = np.maximum(r_pre, 0.0)
    u = (r @ params.score_w2 + params.score_b2)[:, 0]
    s_raw = 1.0 / (1.0 + np.exp(-u))
    return _Tape(
        cfg=cfg, guide=guide, audio=audio, anchors=anchors, xa=xa, xv=xv,
        layers=layer_tapes, contextual=q_in, r_pre=r_pre, r=r, s_raw=s_raw,
    )


def cross_attend(
    audio, video_pruned, params: SelectorParams, cfg: SelectorConfig
) -> np.ndarray:
    """Contextual audio representations from cross-attention over video.

    Audio rows are queries; pruned video rows supply keys and values. With
    layers > 1 the audio-side output of each block feeds the next block's
    queries while keys/values stay bound to the projected video tokens.
    """
    tape = _attend_forward(
        as_matrix(audio, "audio"),
        as_matrix(video_pruned, "video_pruned"),
        params,
        cfg,
        guide="video",
    )
    return tape.contextual


def score_tokens(contextual, params: SelectorParams) -> np.ndarray:
    """Per-token saliency: sigmoid(w2 . relu(w1 . h_j + b1) + b2)."""
    h = as_matrix(contextual, "contextual")
    r = np.maximum(h @ params.score_w1 + params.score_b1, 0.0)
    u = (r @ params.score_w2 + params.score_b2)[:, 0]
    return _open_unit(1.0 / (1.0 + np.exp(-u)))


def _open_unit(s: np.ndarray) -> np.ndarray:
    # Keep scores strictly inside (0, 1) even under sigmoid saturation.
    return np.clip(s, 1e-12, 1.0 - 1e-12)


def select_audio(
    audio, scores, cfg: CompressionConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Hard top-k mask over audio saliency scores.

    Returns (mask, kept_audio): mask has exactly n_hat_a ones, placed at
    the top-scoring positions with ties broken toward lower indices.
    """
    a = as_matrix(audio, "audio")
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != (a.shape[0],):
        raise ShapeError(f"scores shape {s.shape} does not match {a.shape[0]} tokens")
    n_hat_a = retained_count(cfg.alpha_a, a.shape[0])
    kept = topk_indices(s, n_hat_a)
    mask = np.zeros(a.shape[0], dtype=np.int64)
    mask[kept] = 1
    return mask, kept


def run_selector(
    audio,
    anchors,
    params: SelectorParams,
    cfg: SelectorConfig,
    comp: CompressionConfig,
    guide: str = "video",
) -> SelectorOutput:
    """Full selector pass over one chunk's audio given anchor tokens."""
    if guide not in ("video", "audio"):
        raise ParameterError(f"unknown guide {guide!r}")
    audio = as_matrix(audio, "audio")
    anchors = as_matrix(anchors, "anchors")
    tape = _attend_forward(audio, anchors, params, cfg, guide)
    scores = _open_unit(tape.s_raw)
    mask, kept = select_audio(audio, scores, comp)
    return SelectorOutput(
        scores=scores, mask=mask, kept_audio=kept,
        contextual=tape.contextual, cache=tape,
    )


def forward(
    chunk: Chunk,
    kept_frame1,
    kept_frame2,
    params: SelectorParams,
    cfg: SelectorConfig,
    comp: CompressionConfig,
) -> SelectorOutput:
    """Video-guided selection for one chunk.

    ``kept_frame1``/``kept_frame2`` are the index lists produced by the
    video pruning stage for the same chunk; the retained rows of both
    frames form the anchor set.
    """
    kept1 = np.asarray(kept_frame1, dtype=np.int64)
    kept2 = np.asarray(kept_frame2, dtype=np.int64)
    anchors = np.vstack([chunk.frame1[kept1], chunk.frame2[kept2]])
    return run_selector(chunk.audio, anchors, params, cfg, comp, guide="video")


def backward_ste(
    output: SelectorOutput, params: SelectorParams, upstream_grad
) -> SelectorParams:
    """Parameter gradients for a loss on the masked audio output.

    The forward contract is z_hat_j = m_j * z_j. ``upstream_grad`` is
    dL/dz_hat (shape n_a x D). The identity surrogate turns it into a
    score gradient dL/ds_j = <upstream_grad[j], audio[j]> for every token
    (selected or not), after which gradients are exact reverse-mode
    derivatives through the scoring head and all attention layers into
    every selector parameter. Token embeddings receive no gradient.
    """
    tape = output.cache
    if tape is None:
        raise StateError("backward_ste requires the output of a forward pass")
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != tape.audio.shape:
        raise ShapeError(
            f"upstream grad shape {g.shape} != audio shape {tape.audio.shape}"
        )
    d_scores = (g * tape.audio).sum(axis=1)
    return _backward_from_scores(tape, params, d_scores)


def _backward_from_scores(
    tape: _Tape, params: SelectorParams, d_scores: np.ndarray
) -> SelectorParams:
    cfg = tape.cfg
    grads = SelectorParams.zeros(cfg)
    # Scoring head.
    du = d_scores * tape.s_raw * (1.0 - tape.s_raw)
    grads.score_w2[...] = tape.r.T @ du[:, None]
    grads.score_b2[...] = du.sum()
    dr = du[:, None] @ params.score_w2.T
    dr_pre = dr * (tape.r_pre > 0.0)
    grads.score_w1[...] = tape.contextual.T @ dr_pre
    grads.score_b1[...] = dr_pre.sum(axis=0)
    d_out = dr_pre @ params.score_w1.T
    # Attention blocks, last to first.
    scale = 1.0 / math.sqrt(cfg.head_dim)
    d_xv = np.zeros_like(tape.xv)
    for layer, lt, glayer in zip(
        reversed(params.attn), reversed(tape.layers), reversed(grads.attn)
    ):
        d_ctx = d_out @ layer.wo.T
        glayer.wo[...] = lt.ctx.T @ d_out
        glayer.bo[...] = d_out.sum(axis=0)
        d_ctx_h = _split_heads(d_ctx, cfg.heads)
        d_p = d_ctx_h @ lt.vh.transpose(0, 2, 1)
        d_vh = lt.p.transpose(0, 2, 1) @ d_ctx_h
        d_logits = lt.p * (d_p - (d_p * lt.p).sum(axis=-1, keepdims=True))
        d_qh = d_logits @ lt.kh * scale
        d_kh = d_logits.transpose(0, 2, 1) @ lt.qh * scale
        d_q = _merge_heads(d_qh)
        d_k = _merge_heads(d_kh)
        d_v = _merge_heads(d_vh)
        glayer.wq[...] = lt.q_in.T @ d_q
        glayer.bq[...] = d_q.sum(axis=0)
        glayer.wk[...] = tape.xv.T @ d_k
        glayer.bk[...] = d_k.sum(axis=0)
        glayer.wv[...] = tape.xv.T @ d_v
        glayer.bv[...] = d_v.sum(axis=0)
        d_xv += d_k @ layer.wk.T + d_v @ layer.wv.T
        d_out = d_q @ layer.wq.T  # becomes d(q_in), i.e. previous block's output grad
    d_xa = d_out
    if tape.guide == "video":
        grads.video_proj_w[...] = tape.anchors.T @ d_xv
        grads.video_proj_b[...] = d_xv.sum(axis=0)
    else:
        # Keys/values came from the audio projection too.
        d_xa = d_xa + d_xv
    grads.audio_proj_w[...] = tape.audio.T @ d_xa
    grads.audio_proj_b[...] = d_xa.sum(axis=0)
    return grads


def save_params(path, cfg: SelectorConfig, params: SelectorParams) -> None:
    """Write config and tensors in OTP1 format."""
    header = struct.pack(
        "<IIIII", cfg.dim, cfg.hidden, cfg.heads, cfg.mlp_hidden, cfg.layers
    )
    parts = [PARAMS_MAGIC, header]
    for _, t in params.named_tensors():
        parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_params(path) -> tuple[SelectorConfig, SelectorParams]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != PARAMS_MAGIC:
        raise FormatError("bad magic, expected OTP1", offset=0)
    if len(buf) < 24:
        raise FormatError("truncated header", offset=4)
    dim, hidden, heads, mlp_hidden, layers = struct.unpack_from("<IIIII", buf, 4)
    try:
        cfg = SelectorConfig(
            dim=dim, hidden=hidden, heads=heads, mlp_hidden=mlp_hidden, layers=layers
        )
    except ParameterError as exc:
        raise FormatError(f"invalid config in header: {exc}", offset=4) from exc
    expected = 8 * param_count(cfg)
    if len(buf) - 24 < expected:
        raise FormatError(
            f"payload truncated: expected {expected} bytes, got {len(buf) - 24}",
            offset=24,
        )
    if len(buf) - 24 > expected:
        raise FormatError("trailing bytes after payload", offset=24 + expected)
    vec = np.frombuffer(buf, dtype="<f8", count=param_count(cfg), offset=24)
    return cfg, SelectorParams.from_vector(cfg, vec)
