"""Clip data model and the "CVID" on-disk video format.

CVID layout: magic b"CVID", then little-endian u32 T, C, H, W, then
T*C*H*W float32 little-endian pixel values in [0,1], row-major, T-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CVID"
_HEADER = struct.Struct("<4sIIII")


class VideoFormatError(ValueError):
    """Bad magic or malformed header/payload."""


class TruncatedFileError(VideoFormatError):
    """Payload shorter than the header promises."""


class WindowRangeError(IndexError):
    """Requested frame window falls outside the video."""


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, C, H, W) float32 in [0, 1]
    video_id: str = ""
    start_frame: int = 0
    fps: float = 25.0

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float32)
        if f.ndim != 4:
            raise ValueError(f"frames must be (T, C, H, W), got shape {f.shape}")
        t, _, h, w = f.shape
        if t % 2 != 0:
            raise ValueError("frame count must be even")
        if h % 16 or w % 16:
            raise ValueError("H and W must be multiples of 16")
        if f.min() < 0.0 or f.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        self.frames = f

    @property
    def num_frames(self):
        return self.frames.shape[0]


def write_video(path, frames: np.ndarray) -> None:
    """Write a full (T, C, H, W) float32 block as a CVID file."""
    frames = np.ascontiguousarray(frames, dtype=np.float32)
    if frames.ndim != 4:
        raise ValueError("expected a (T, C, H, W) array")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, *frames.shape))
        fh.write(frames.astype("<f4").tobytes())


def read_header(path):
    """Return (T, C, H, W) from a CVID file without reading the payload."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than header")
    magic, t, c, h, w = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise VideoFormatError(f"{path}: bad magic {magic!r}")
    return t, c, h, w


def load_clip(path, start_frame: int, length: int) -> VideoClip:
    """Decode a frame window [start_frame, start_frame+length) from a CVID file."""
    t, c, h, w = read_header(path)
    if start_frame < 0 or length < 1 or start_frame + length > t:
        raise WindowRangeError(
            f"{path}: window [{start_frame}, {start_frame + length}) outside video of {t} frames")
    frame_bytes = c * h * w * 4
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size + start_frame * frame_bytes)
        raw = fh.read(length * frame_bytes)
    if len(raw) < length * frame_bytes:
        raise TruncatedFileError(f"{path}: truncated payload")
    frames = np.frombuffer(raw, dtype="<f4").reshape(length, c, h, w)
    return VideoClip(frames=frames.copy(), video_id=str(path), start_frame=start_frame)


def load_video(path) -> np.ndarray:
    """Read the whole pixel block of a CVID file."""
    t, _, _, _ = read_header(path)
    return load_clip(path, 0, t).frames


def segment_video(path, clip_len: int, stride: int) -> list[tuple[int, int]]:
    """All full windows [i*stride, i*stride + clip_len) over the file, in order."""
    if clip_len % 2 != 0:
        raise ValueError("clip_len must be even")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    t, _, _, _ = read_header(path)
    return segment_length(t, clip_len, stride)


def segment_length(num_frames: int, clip_len: int, stride: int) -> list[tuple[int, int]]:
    """Window arithmetic shared by segment_video and in-memory callers."""
    if clip_len > num_frames:
        return []
    n = (num_frames - clip_len) // stride + 1
    return [(i * stride, i * stride + clip_len) for i in range(n)]
