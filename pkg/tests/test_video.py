"""CVID format round trips, error reporting, and window segmentation."""

import struct

import numpy as np
import pytest

from scrl.video import (TruncatedFileError, VideoClip, VideoFormatError,
                        WindowRangeError, load_clip, load_video, read_header,
                        segment_length, segment_video, write_video)


def _frames(t=16, c=3, h=64, w=64, seed=0):
    return np.random.default_rng(seed).random((t, c, h, w)).astype(np.float32)


def test_round_trip_is_bit_identical(tmp_path):
    frames = _frames()
    p = tmp_path / "v.cvid"
    write_video(p, frames)
    assert np.array_equal(load_video(p), frames)


def test_header_and_payload_layout(tmp_path):
    frames = _frames()
    p = tmp_path / "v.cvid"
    write_video(p, frames)
    raw = p.read_bytes()
    magic, t, c, h, w = struct.unpack("<4sIIII", raw[:20])
    assert magic == b"CVID"
    assert (t, c, h, w) == (16, 3, 64, 64)
    # payload is exactly T*C*H*W little-endian float32 values
    assert len(raw) == 20 + 16 * 3 * 64 * 64 * 4
    payload = np.frombuffer(raw[20:], dtype="<f4").reshape(16, 3, 64, 64)
    assert np.array_equal(payload, frames)


def test_load_clip_window(tmp_path):
    frames = _frames(t=32)
    p = tmp_path / "v.cvid"
    write_video(p, frames)
    clip = load_clip(p, 8, 16)
    assert clip.start_frame == 8
    assert np.array_equal(clip.frames, frames[8:24])


def test_window_out_of_range(tmp_path):
    p = tmp_path / "v.cvid"
    write_video(p, _frames())
    with pytest.raises(WindowRangeError):
        load_clip(p, 10, 16)
    with pytest.raises(WindowRangeError):
        load_clip(p, 100, 2)


def test_bad_magic_reported_distinctly(tmp_path):
    p = tmp_path / "bad.cvid"
    p.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(VideoFormatError):
        read_header(p)


def test_truncated_file_reported_distinctly(tmp_path):
    frames = _frames()
    p = tmp_path / "v.cvid"
    write_video(p, frames)
    data = p.read_bytes()
    p.write_bytes(data[:len(data) // 2])
    with pytest.raises(TruncatedFileError):
        load_video(p)


def test_clip_invariants():
    with pytest.raises(ValueError):
        VideoClip(frames=_frames(t=15), video_id="v", start_frame=0)  # odd T
    with pytest.raises(ValueError):
        VideoClip(frames=_frames(h=60), video_id="v", start_frame=0)  # H % 16
    with pytest.raises(ValueError):
        VideoClip(frames=_frames() + 2.0, video_id="v", start_frame=0)  # range


def test_segment_examples(tmp_path):
    p = tmp_path / "v.cvid"
    write_video(p, _frames(t=64))
    assert segment_video(p, 16, 16) == [(0, 16), (16, 32), (32, 48), (48, 64)]
    assert len(segment_video(p, 16, 8)) == 7
    assert segment_length(16, 16, 1) == [(0, 16)]


def test_segment_short_video_is_empty_not_error():
    assert segment_length(10, 16, 4) == []


def test_segment_windows_are_in_order_and_full():
    for n, cl, s in [(600, 16, 16), (600, 16, 8), (200, 32, 24)]:
        wins = segment_length(n, cl, s)
        assert wins == [(i * s, i * s + cl) for i in range(len(wins))]
        assert all(e <= n for _, e in wins)
        # one more window would overrun
        assert len(wins) * s + cl > n
