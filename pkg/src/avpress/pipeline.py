"""End-to-end compression of a stream: video pruning then audio selection."""

from __future__ import annotations

import numpy as np

from .audio_selector import SelectorConfig, SelectorParams, forward
from .baselines import audio_only_select, random_prune
from .stream import (
    Chunk,
    ChunkedStream,
    CompressedChunk,
    CompressionConfig,
    require_valid,
    retained_counts,
)
from .video_pruning import prune_chunk_video


def compress_chunk(
    chunk: Chunk,
    params: SelectorParams,
    scfg: SelectorConfig,
    comp: CompressionConfig,
    guide: str = "video",
) -> CompressedChunk:
    """Prune one chunk's video by saliency, then select its audio tokens."""
    kept1, kept2, _ = prune_chunk_video(chunk, comp)
    if guide == "video":
        out = forward(chunk, kept1, kept2, params, scfg, comp)
    else:
        out = audio_only_select(chunk, params, scfg, comp)
    tokens = np.vstack(
        [chunk.frame1[kept1], chunk.frame2[kept2], chunk.audio[out.kept_audio]]
    )
    return CompressedChunk(
        index_t=chunk.index_t,
        kept_frame1=kept1,
        kept_frame2=kept2,
        kept_audio=out.kept_audio,
        tokens=tokens,
    )


def compress_stream(
    stream: ChunkedStream,
    params: SelectorParams,
    scfg: SelectorConfig,
    comp: CompressionConfig,
    guide: str = "video",
) -> list[CompressedChunk]:
    require_valid(stream)
    return [compress_chunk(c, params, scfg, comp, guide=guide) for c in stream.chunks]


def random_compress_stream(
    stream: ChunkedStream, comp: CompressionConfig, seed: int
) -> list[CompressedChunk]:
    require_valid(stream)
    return [random_prune(c, comp, seed) for c in stream.chunks]


def compressed_to_stream(
    compressed: list[CompressedChunk], D: int
) -> ChunkedStream:
    """Reassemble compressed chunks into a (smaller) valid stream."""
    if not compressed:
        raise ValueError("no chunks to assemble")
    n_hat_p = compressed[0].kept_frame1.shape[0]
    n_hat_a = compressed[0].kept_audio.shape[0]
    chunks = []
    for t, cc in enumerate(compressed):
        frames = cc.tokens[: 2 * n_hat_p]
        chunks.append(
            Chunk(
                index_t=t,
                frame1=frames[:n_hat_p].copy(),
                frame2=frames[n_hat_p:].copy(),
                audio=cc.tokens[2 * n_hat_p :].copy(),
            )
        )
    return ChunkedStream(chunks=chunks, n_p=n_hat_p, n_a=n_hat_a, D=D)


def realized_retained_ratio(stream: ChunkedStream, comp: CompressionConfig) -> float:
    """Overall kept-token fraction, averaged over chunks.

    All chunks share dimensions, so this is (2*n_hat_p + n_hat_a) over
    (2*n_p + n_a).
    """
    n_hat_p, n_hat_a = retained_counts(comp, stream.n_p, stream.n_a)
    return (2 * n_hat_p + n_hat_a) / (2 * stream.n_p + stream.n_a)
