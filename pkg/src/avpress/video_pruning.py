"""Per-chunk video token pruning from frame-level saliency.

Frame 1 is scored spatially (cosine distance of each token from the frame
mean, so tokens that diverge from the global layout rank high). Frame 2
is scored temporally (cosine distance from the same-index token in frame
1, so motion and appearance changes rank high). Each frame then keeps its
top-scoring tokens under the video retention ratio, in original order.

All functions are pure; chunks can be pruned concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import as_matrix, cosine_distance, mean_rows, topk_indices
from .stream import Chunk, CompressionConfig, retained_counts


@dataclass
class VideoSaliency:
    spatial: np.ndarray  # frame1 scores, length n_p, each in [0, 2]
    temporal: np.ndarray  # frame2 scores, length n_p


def spatial_saliency(frame1) -> np.ndarray:
    """Cosine distance of every frame1 token from the frame mean."""
    f1 = as_matrix(frame1, "frame1")
    mean = mean_rows(f1)
    return np.array([cosine_distance(row, mean) for row in f1])


def temporal_saliency(frame1, frame2) -> np.ndarray:
    """Cosine distance of each frame2 token from its frame1 counterpart.

    Tokens are matched positionally: row i of frame2 against row i of
    frame1.
    """
    f1 = as_matrix(frame1, "frame1")
    f2 = as_matrix(frame2, "frame2")
    if f1.shape != f2.shape:
        raise ShapeError(f"frame shapes differ: {f1.shape} vs {f2.shape}")
    return np.array([cosine_distance(f2[i], f1[i]) for i in range(f1.shape[0])])


def prune_chunk_video(
    chunk: Chunk, cfg: CompressionConfig
) -> tuple[np.ndarray, np.ndarray, VideoSaliency]:
    """Select the retained token indices for both frames of a chunk.

    Returns (kept_frame1, kept_frame2, saliency); both index lists are
    strictly increasing and have exactly n_hat_p entries.
    """
    saliency = VideoSaliency(
        spatial=spatial_saliency(chunk.frame1),
        temporal=temporal_saliency(chunk.frame1, chunk.frame2),
    )
    n_hat_p, _ = retained_counts(cfg, chunk.frame1.shape[0], chunk.audio.shape[0])
    kept1 = topk_indices(saliency.spatial, n_hat_p)
    kept2 = topk_indices(saliency.temporal, n_hat_p)
    return kept1, kept2, saliency
