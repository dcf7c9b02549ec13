"""Chunked audio-video token streams: data model, validation, binary formats.

A stream is an ordered list of chunks. Each chunk carries the token
matrices of two consecutive video frames plus the synchronized audio
tokens, all in a shared embedding dimension D.

File formats (all little-endian, no padding or alignment gaps):

``OTS1`` (token stream)
    bytes 0-3   magic ``4F 54 53 31`` ("OTS1")
    bytes 4-19  u32 K, n_p, n_a, D
    then per chunk, in order: frame1, frame2, audio, each row-major
    IEEE-754 binary32. Storage precision is 32-bit; in memory tokens are
    held as float64, so a stream round-trips bit-exactly iff its values
    are binary32-representable (the synthetic generator guarantees this).

``OTL1`` (planted labels)
    magic ``4F 54 4C 31`` ("OTL1"), u32 K, then per chunk three
    u32-count-prefixed u32 index lists: frame1-salient, frame2-moving,
    audio-informative.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError

STREAM_MAGIC = b"OTS1"
LABELS_MAGIC = b"OTL1"

_U32_MAX = 2**32 - 1

# Guard for floor(alpha * n): binary floats of 1 - rho can undershoot the
# exact decimal product by a few ulps (e.g. (1 - 0.77) * 100 < 23).
_FLOOR_SLACK = 1e-9


@dataclass
class Chunk:
    """One temporally aligned block: two video frames plus audio tokens."""

    index_t: int
    frame1: np.ndarray  # (n_p, D)
    frame2: np.ndarray  # (n_p, D)
    audio: np.ndarray  # (n_a, D)


@dataclass
class ChunkedStream:
    chunks: list[Chunk]
    n_p: int  # video tokens per frame
    n_a: int  # audio tokens per chunk
    D: int  # embedding dimension

    @property
    def K(self) -> int:
        return len(self.chunks)

    def tokens_per_chunk(self) -> int:
        return 2 * self.n_p + self.n_a


@dataclass(frozen=True)
class CompressionConfig:
    """Per-modality compression ratios; retention is alpha = 1 - rho."""

    rho_v: float
    rho_a: float
    selector_layers: int = 1

    def __post_init__(self):
        for name, rho in (("rho_v", self.rho_v), ("rho_a", self.rho_a)):
            if not (0.0 <= rho < 1.0) or not math.isfinite(rho):
                raise ParameterError(f"{name} must lie in [0, 1), got {rho}")
        if self.selector_layers < 1:
            raise ParameterError("selector_layers must be >= 1")

    @property
    def alpha_v(self) -> float:
        return 1.0 - self.rho_v

    @property
    def alpha_a(self) -> float:
        return 1.0 - self.rho_a


@dataclass
class CompressedChunk:
    """A chunk after token selection, in original interleave order."""

    index_t: int
    kept_frame1: np.ndarray  # strictly increasing indices into frame1
    kept_frame2: np.ndarray
    kept_audio: np.ndarray
    tokens: np.ndarray  # (2*n_hat_p + n_hat_a, D): [frame1-kept; frame2-kept; audio-kept]


@dataclass
class ChunkLabels:
    """Ground-truth planted token indices for one chunk."""

    salient_frame1: tuple[int, ...]
    moving_frame2: tuple[int, ...]
    informative_audio: tuple[int, ...]


@dataclass
class PlantedLabels:
    per_chunk: list[ChunkLabels]


@dataclass
class Violation:
    chunk: int | None
    field_name: str
    message: str

    def __str__(self) -> str:
        where = "stream" if self.chunk is None else f"chunk {self.chunk}"
        return f"{where}: {self.field_name}: {self.message}"


def retained_count(alpha: float, n: int) -> int:
    """floor(alpha * n) with a minimum of one retained token."""
    return max(1, int(math.floor(alpha * n + _FLOOR_SLACK)))


def retained_counts(cfg: CompressionConfig, n_p: int, n_a: int) -> tuple[int, int]:
    """Retained token counts (per frame, per chunk audio) for a config."""
    if n_p < 1 or n_a < 1:
        raise ParameterError("token counts must be >= 1")
    return retained_count(cfg.alpha_v, n_p), retained_count(cfg.alpha_a, n_a)


def _check_matrix(
    violations: list[Violation], t: int, name: str, m, rows: int | None, cols: int
) -> None:
    if not isinstance(m, np.ndarray) or m.ndim != 2:
        violations.append(Violation(t, name, "not a 2-D array"))
        return
    if rows is not None and m.shape[0] != rows:
        violations.append(
            Violation(t, name, f"expected {rows} rows, got {m.shape[0]}")
        )
    if m.shape[1] != cols:
        violations.append(
            Violation(t, name, f"expected {cols} columns (D), got {m.shape[1]}")
        )
    if not np.isfinite(m).all():
        violations.append(Violation(t, name, "contains non-finite entries"))


def validate_stream(s: ChunkedStream) -> list[Violation]:
    """Check every stream and chunk invariant; an empty list means ok."""
    violations: list[Violation] = []
    if s.n_p < 1 or s.n_a < 1 or s.D < 1:
        violations.append(
            Violation(None, "dims", f"n_p={s.n_p}, n_a={s.n_a}, D={s.D} must be >= 1")
        )
        return violations
    if not s.chunks:
        violations.append(Violation(None, "chunks", "stream has no chunks"))
        return violations
    for t, chunk in enumerate(s.chunks):
        if chunk.index_t != t:
            violations.append(
                Violation(t, "index_t", f"expected {t}, got {chunk.index_t}")
            )
        _check_matrix(violations, t, "frame1", chunk.frame1, s.n_p, s.D)
        _check_matrix(violations, t, "frame2", chunk.frame2, s.n_p, s.D)
        _check_matrix(violations, t, "audio", chunk.audio, s.n_a, s.D)
    return violations


def require_valid(s: ChunkedStream) -> None:
    """Raise ParameterError if the stream violates any invariant."""
    violations = validate_stream(s)
    if violations:
        raise ParameterError(
            "invalid stream: " + "; ".join(str(v) for v in violations[:5])
        )


def _f32_bytes(m: np.ndarray) -> bytes:
    return np.ascontiguousarray(m, dtype="<f4").tobytes()


def save_stream(s: ChunkedStream, path) -> None:
    """Write a validated stream in OTS1 format."""
    require_valid(s)
    for dim in (s.K, s.n_p, s.n_a, s.D):
        if dim > _U32_MAX:
            raise FormatError(f"dimension {dim} overflows u32")
    parts = [STREAM_MAGIC, struct.pack("<IIII", s.K, s.n_p, s.n_a, s.D)]
    for chunk in s.chunks:
        parts.append(_f32_bytes(chunk.frame1))
        parts.append(_f32_bytes(chunk.frame2))
        parts.append(_f32_bytes(chunk.audio))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def _read_matrix(buf: bytes, offset: int, rows: int, cols: int) -> np.ndarray:
    data = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=offset)
    return data.astype(np.float64).reshape(rows, cols)


def load_stream(path) -> ChunkedStream:
    """Read an OTS1 file, checking magic, header sanity, and exact length."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != STREAM_MAGIC:
        raise FormatError("bad magic, expected OTS1", offset=0)
    if len(buf) < 20:
        raise FormatError("truncated header", offset=4)
    K, n_p, n_a, D = struct.unpack_from("<IIII", buf, 4)
    if min(K, n_p, n_a, D) == 0:
        raise FormatError(f"zero dimension in header K={K} n_p={n_p} n_a={n_a} D={D}", offset=4)
    payload = K * (2 * n_p + n_a) * D * 4  # exact python int, no overflow
    if len(buf) - 20 < payload:
        raise FormatError(
            f"payload truncated: header declares {payload} bytes, file holds {len(buf) - 20}",
            offset=20,
        )
    if len(buf) - 20 > payload:
        raise FormatError("trailing bytes after payload", offset=20 + payload)
    chunks = []
    off = 20
    frame_bytes = n_p * D * 4
    audio_bytes = n_a * D * 4
    for t in range(K):
        frame1 = _read_matrix(buf, off, n_p, D)
        frame2 = _read_matrix(buf, off + frame_bytes, n_p, D)
        audio = _read_matrix(buf, off + 2 * frame_bytes, n_a, D)
        chunks.append(Chunk(index_t=t, frame1=frame1, frame2=frame2, audio=audio))
        off += 2 * frame_bytes + audio_bytes
    return ChunkedStream(chunks=chunks, n_p=n_p, n_a=n_a, D=D)


def _pack_index_list(indices: tuple[int, ...]) -> bytes:
    return struct.pack(f"<I{len(indices)}I", len(indices), *indices)


def save_labels(labels: PlantedLabels, path) -> None:
    """Write planted-label index sets in OTL1 format."""
    parts = [LABELS_MAGIC, struct.pack("<I", len(labels.per_chunk))]
    for entry in labels.per_chunk:
        parts.append(_pack_index_list(entry.salient_frame1))
        parts.append(_pack_index_list(entry.moving_frame2))
        parts.append(_pack_index_list(entry.informative_audio))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_labels(path) -> PlantedLabels:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != LABELS_MAGIC:
        raise FormatError("bad magic, expected OTL1", offset=0)
    if len(buf) < 8:
        raise FormatError("truncated header", offset=4)
    (K,) = struct.unpack_from("<I", buf, 4)
    off = 8

    def read_list() -> tuple[int, ...]:
        nonlocal off
        if len(buf) - off < 4:
            raise FormatError("truncated index list header", offset=off)
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        if len(buf) - off < 4 * count:
            raise FormatError(
                f"index list declares {count} entries beyond end of file", offset=off
            )
        values = struct.unpack_from(f"<{count}I", buf, off)
        off += 4 * count
        return tuple(int(v) for v in values)

    per_chunk = []
    for _ in range(K):
        per_chunk.append(
            ChunkLabels(
                salient_frame1=read_list(),
                moving_frame2=read_list(),
                informative_audio=read_list(),
            )
        )
    if off != len(buf):
        raise FormatError("trailing bytes after payload", offset=off)
    return PlantedLabels(per_chunk=per_chunk)
