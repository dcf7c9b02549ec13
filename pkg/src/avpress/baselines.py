"""Ablation comparators: uniform random pruning and a self-guided selector.

Both produce outputs interchangeable with the main pipeline so the
comparison isolates exactly one ingredient: the random baseline removes
all saliency modeling, and the audio-only selector keeps the scoring
machinery but replaces the video anchors with the chunk's own audio
tokens (intra-audio self-attention, no visual guidance).
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .audio_selector import SelectorConfig, SelectorOutput, SelectorParams, run_selector
from .stream import (
    Chunk,
    ChunkedStream,
    CompressedChunk,
    CompressionConfig,
    PlantedLabels,
    retained_counts,
)


class BaselineKind(str, Enum):
    RANDOM = "random"
    AUDIO_ONLY = "audio_only"


def random_prune(chunk: Chunk, cfg: CompressionConfig, seed: int) -> CompressedChunk:
    """Keep uniformly random token subsets of the mandated sizes.

    Deterministic per (seed, chunk index): the generator is Philox keyed
    by the pair, so chunks can be pruned independently and in parallel.
    """
    n_p = chunk.frame1.shape[0]
    n_a = chunk.audio.shape[0]
    n_hat_p, n_hat_a = retained_counts(cfg, n_p, n_a)
    rng = np.random.Generator(
        np.random.Philox(key=np.array([seed, chunk.index_t], dtype=np.uint64))
    )
    kept1 = np.sort(rng.choice(n_p, size=n_hat_p, replace=False)).astype(np.int64)
    kept2 = np.sort(rng.choice(n_p, size=n_hat_p, replace=False)).astype(np.int64)
    kept_a = np.sort(rng.choice(n_a, size=n_hat_a, replace=False)).astype(np.int64)
    tokens = np.vstack([chunk.frame1[kept1], chunk.frame2[kept2], chunk.audio[kept_a]])
    return CompressedChunk(
        index_t=chunk.index_t,
        kept_frame1=kept1,
        kept_frame2=kept2,
        kept_audio=kept_a,
        tokens=tokens,
    )


def audio_only_select(
    chunk: Chunk,
    params: SelectorParams,
    scfg: SelectorConfig,
    comp: CompressionConfig,
) -> SelectorOutput:
    """Selector pass with no visual guidance.

    Keys and values are the chunk's own audio tokens, routed through the
    audio input projection (the video projection is unused and receives
    no gradient in this mode). Scoring and top-k are unchanged.
    """
    return run_selector(
        chunk.audio, chunk.audio, params, scfg, comp, guide="audio"
    )


def random_selection_recall(
    stream: ChunkedStream, labels: PlantedLabels, cfg: CompressionConfig, seed: int
) -> float:
    """Micro-aggregated informative-audio recall of the random baseline."""
    hits = total = 0
    for chunk, entry in zip(stream.chunks, labels.per_chunk):
        kept = set(int(i) for i in random_prune(chunk, cfg, seed).kept_audio)
        hits += len(kept & set(entry.informative_audio))
        total += len(entry.informative_audio)
    return hits / total if total else 1.0
