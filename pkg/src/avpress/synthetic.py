"""Seeded synthetic streams with planted ground truth.

The generator plants recoverable structure per chunk and records the
indices, so selection quality can be scored against exact labels instead
of eyeballed:

* frame1 tokens cluster around a per-chunk base direction; planted
  "salient" tokens point along directions orthogonal to it, which drives
  their cosine distance from the frame mean toward 1.
* frame2 is a copy of frame1 except for planted "moving" tokens, which
  are rotated in-plane away from their frame1 counterpart by an angle set
  from the margin, so their positional cosine distance is exactly
  min(2, margin * noise_scale) while unmoved tokens score exactly 0.
* audio tokens are isotropic noise except for planted "informative"
  tokens, which carry a component of margin * noise_scale along the
  chunk's anchor direction, and optional "decoy" tokens, which carry the
  same-magnitude component along a direction drawn from the same
  distribution but absent from the video.

The anchor of chunk t is a_t = unit(g + anchor_spread * u_t) around a
task-level content direction g, and a_t is planted as a salient frame1
token, so it survives video pruning and is available to the selector.
Decoys use an independent draw d_t from the identical distribution.
Informative and decoy audio tokens therefore have the same marginal
distribution: with equal planted counts nothing in the audio alone says
which group matters, and only comparison against the retained video
anchor resolves it. That is the asymmetry a vision-guided selector is
supposed to exploit, and it is what lets an audio-only ablation be
measurably worse.

The content direction g defines the learnable association, so it is
keyed by ``anchor_seed`` (a spec field): streams generated from the same
spec with different seeds share the task and differ only in noise,
indices, and layout, which is what lets a held-out stream measure
generalization.

All randomness comes from Philox counter-based generators, and every
matrix is quantized to binary32 before being stored, so a given
(spec, seed) pair reproduces the stream byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .stream import Chunk, ChunkedStream, ChunkLabels, PlantedLabels


@dataclass(frozen=True)
class GenSpec:
    """Shape and separation parameters for one synthetic stream."""

    chunks: int
    frame_tokens: int  # n_p
    audio_tokens: int  # n_a
    dim: int  # D
    planted_spatial: int  # salient tokens in frame1
    planted_moving: int  # rotated tokens in frame2
    planted_audio: int  # informative audio tokens
    planted_decoy: int = 0  # content-like audio tokens not grounded in video
    noise_scale: float = 0.02
    margin: float = 10.0  # separation, as a multiple of noise_scale
    anchor_spread: float = 1.0  # per-chunk anchor dispersion around g
    anchor_seed: int = 0  # keys the content direction g (the task)

    def __post_init__(self):
        if min(self.chunks, self.frame_tokens, self.audio_tokens, self.dim) < 1:
            raise ParameterError("chunks, frame_tokens, audio_tokens, dim must be >= 1")
        if not 0 <= self.planted_spatial <= self.frame_tokens:
            raise ParameterError("planted_spatial exceeds frame_tokens")
        if not 0 <= self.planted_moving <= self.frame_tokens:
            raise ParameterError("planted_moving exceeds frame_tokens")
        if self.planted_audio < 0 or self.planted_decoy < 0:
            raise ParameterError("planted audio counts must be >= 0")
        if self.planted_audio + self.planted_decoy > self.audio_tokens:
            raise ParameterError("planted_audio + planted_decoy exceeds audio_tokens")
        if self.planted_audio >= 1 and self.planted_spatial < 1:
            raise ParameterError(
                "informative audio requires at least one planted frame1 token "
                "to host the anchor direction"
            )
        # Anchor, decoy direction, base, and remaining salient directions
        # must fit as an (almost) orthogonal system.
        if self.dim < self.planted_spatial + 3:
            raise ParameterError("dim must be >= planted_spatial + 3")
        if not (self.noise_scale > 0 and self.margin > 0):
            raise ParameterError("noise_scale and margin must be positive")
        if not self.anchor_spread >= 0:
            raise ParameterError("anchor_spread must be >= 0")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        v = rng.standard_normal(dim)
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def _unit_orthogonal_to(rng: np.random.Generator, basis: list[np.ndarray]) -> np.ndarray:
    """Random unit vector orthogonal to an orthonormal ``basis``."""
    dim = basis[0].shape[0]
    while True:
        v = rng.standard_normal(dim)
        for b in basis:
            v = v - np.dot(v, b) * b
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def _rotate_away(rng: np.random.Generator, row: np.ndarray, cos_theta: float) -> np.ndarray:
    """Rotate ``row`` in-plane so cos(new, old) equals ``cos_theta`` exactly."""
    direction = _unit(row)
    perp = _unit_orthogonal_to(rng, [direction])
    sin_theta = float(np.sqrt(max(0.0, 1.0 - cos_theta * cos_theta)))
    return float(np.linalg.norm(row)) * (cos_theta * direction + sin_theta * perp)


def generate_synthetic(spec: GenSpec, seed: int) -> tuple[ChunkedStream, PlantedLabels]:
    """Deterministically build a stream and its planted-label ground truth."""
    task_rng = np.random.Generator(
        np.random.Philox(key=np.array([spec.anchor_seed, 0xA17C], dtype=np.uint64))
    )
    rng = np.random.Generator(
        np.random.Philox(key=np.array([seed, 0x57E4], dtype=np.uint64))
    )
    n_p, n_a, D = spec.frame_tokens, spec.audio_tokens, spec.dim
    sigma = spec.noise_scale
    planted_mag = spec.margin * sigma
    moving_cos = 1.0 - min(2.0, planted_mag)

    content = _random_unit(task_rng, D)  # task-level content direction g
    chunks: list[Chunk] = []
    labels: list[ChunkLabels] = []
    for t in range(spec.chunks):
        anchor = _unit(content + spec.anchor_spread * _random_unit(rng, D))
        decoy_dir = _unit(content + spec.anchor_spread * _random_unit(rng, D))
        # Orthonormal pair spanning the anchor/decoy plane; base and the
        # remaining salient directions avoid it so frame structure never
        # leaks content alignment.
        q1 = anchor
        q2_raw = decoy_dir - np.dot(decoy_dir, q1) * q1
        if np.linalg.norm(q2_raw) > 1e-9:
            plane = [q1, _unit(q2_raw)]
        else:
            plane = [q1]
        base = _unit_orthogonal_to(rng, plane)

        salient = np.sort(rng.choice(n_p, size=spec.planted_spatial, replace=False))
        frame1 = base[None, :] + sigma * rng.standard_normal((n_p, D))
        directions = [anchor]
        ortho_basis = plane + [base]
        for _ in range(1, spec.planted_spatial):
            d = _unit_orthogonal_to(rng, ortho_basis)
            directions.append(d)
            ortho_basis.append(d)
        for rank, idx in enumerate(salient):
            frame1[idx] = planted_mag * directions[rank] + sigma * rng.standard_normal(D)

        moving = np.sort(rng.choice(n_p, size=spec.planted_moving, replace=False))
        frame2 = frame1.copy()
        for idx in moving:
            frame2[idx] = _rotate_away(rng, frame1[idx], moving_cos)

        picked = rng.choice(n_a, size=spec.planted_audio + spec.planted_decoy, replace=False)
        informative = np.sort(picked[: spec.planted_audio])
        decoys = np.sort(picked[spec.planted_audio :])
        audio = sigma * rng.standard_normal((n_a, D))
        for idx in informative:
            audio[idx] += planted_mag * anchor
        for idx in decoys:
            audio[idx] += planted_mag * decoy_dir

        chunks.append(
            Chunk(
                index_t=t,
                frame1=_quantize(frame1),
                frame2=_quantize(frame2),
                audio=_quantize(audio),
            )
        )
        labels.append(
            ChunkLabels(
                salient_frame1=tuple(int(i) for i in salient),
                moving_frame2=tuple(int(i) for i in moving),
                informative_audio=tuple(int(i) for i in informative),
            )
        )
    stream = ChunkedStream(chunks=chunks, n_p=n_p, n_a=n_a, D=D)
    return stream, PlantedLabels(per_chunk=labels)


def _quantize(m: np.ndarray) -> np.ndarray:
    # Round through binary32 so saved streams reload bit-identically.
    return m.astype(np.float32).astype(np.float64)
