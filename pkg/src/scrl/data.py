"""Shared corpus access helpers for the training loops and the evaluator."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .video import load_video, read_header, segment_length


class VideoCache:
    """Lazily loads whole CVID videos and keeps them in memory."""

    def __init__(self, corpus_dir):
        self.corpus_dir = Path(corpus_dir)
        self._videos: dict[str, np.ndarray] = {}

    def video(self, video_id: str) -> np.ndarray:
        if video_id not in self._videos:
            self._videos[video_id] = load_video(
                corpus_mod.video_path(self.corpus_dir, video_id))
        return self._videos[video_id]

    def clip(self, video_id: str, start: int, length: int) -> np.ndarray:
        return self.video(video_id)[start:start + length]

    def num_frames(self, video_id: str) -> int:
        if video_id in self._videos:
            return self._videos[video_id].shape[0]
        return read_header(corpus_mod.video_path(self.corpus_dir, video_id))[0]


def pair_video_ids(manifest: dict, pair_idx: int) -> tuple[str, str]:
    pair = manifest["pairs"][pair_idx]
    return Path(pair["a"]).stem, Path(pair["b"]).stem


def split_video_ids(manifest: dict, split: str) -> list[str]:
    """Both screenings of every pair assigned to the split."""
    ids = []
    for i in manifest["splits"][split]:
        a, b = pair_video_ids(manifest, i)
        ids.extend([a, b])
    return ids


def clip_windows(cache: VideoCache, video_ids, clip_len: int,
                 stride: int) -> list[tuple[str, int]]:
    """(video_id, start_frame) for every full window, in corpus order."""
    out = []
    for vid in video_ids:
        for start, _ in segment_length(cache.num_frames(vid), clip_len, stride):
            out.append((vid, start))
    return out
