"""Chunk-level compression of audio-video token streams.

Two stages per chunk: saliency-based video token pruning (spatial scores
on frame 1, temporal scores on frame 2, top-k per frame), then a trainable
cross-attention selector that keeps the audio tokens most aligned with
the retained video anchors. The selector trains end-to-end through the
hard top-k via a straight-through estimator.
"""

__version__ = "0.1.0"
