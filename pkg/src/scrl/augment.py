"""Clip-wise-consistent stochastic augmentation.

One parameter draw governs every frame of a clip, so the two augmented
views of a clip stay temporally coherent. Order is fixed:
crop -> resize -> flip -> blur -> color jitter -> clamp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .video import VideoClip


@dataclass
class AugmentParams:
    crop_rect: tuple[int, int, int, int]  # top, left, h, w
    flip: bool
    blur_sigma: float
    brightness: float
    contrast: float
    saturation: float


@dataclass
class AugmentPolicy:
    crop_scale_range: tuple[float, float] = (0.4, 1.0)
    crop_aspect_range: tuple[float, float] = (0.6, 5.0 / 3.0)
    flip_prob: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.0, 2.0)
    jitter_range: float = 0.35
    output_size: tuple[int, int] = (64, 64)

    @staticmethod
    def identity(output_size=(64, 64)) -> "AugmentPolicy":
        """Degenerate policy whose only draw is the no-op transform."""
        return AugmentPolicy(crop_scale_range=(1.0, 1.0),
                             crop_aspect_range=(1.0, 1.0), flip_prob=0.0,
                             blur_sigma_range=(0.0, 0.0), jitter_range=0.0,
                             output_size=output_size)


def sample_params(policy: AugmentPolicy, rng: np.random.Generator,
                  frame_hw: tuple[int, int]) -> AugmentParams:
    """One parameter draw for a whole clip of frames sized ``frame_hw``."""
    h, w = frame_hw
    scale = rng.uniform(*policy.crop_scale_range)
    log_a = np.log(policy.crop_aspect_range)
    aspect = np.exp(rng.uniform(log_a[0], log_a[1]))
    if scale >= 1.0:
        ch, cw = h, w  # scale 1 means the full frame regardless of aspect draw
    else:
        area = scale * h * w
        cw = min(w, max(1, int(round(np.sqrt(area * aspect)))))
        ch = min(h, max(1, int(round(np.sqrt(area / aspect)))))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    flip = bool(rng.random() < policy.flip_prob)
    sigma = float(rng.uniform(*policy.blur_sigma_range))
    j = policy.jitter_range
    deltas = rng.uniform(-j, j, size=3) if j > 0 else np.zeros(3)
    return AugmentParams(crop_rect=(top, left, ch, cw), flip=flip,
                         blur_sigma=sigma, brightness=float(deltas[0]),
                         contrast=float(deltas[1]), saturation=float(deltas[2]))


def _resize_bilinear(frames: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """(T, C, h, w) -> (T, C, H, W), half-pixel-centre sampling, edge clamped."""
    t, c, h, w = frames.shape
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return frames
    ys = (np.arange(oh) + 0.5) * h / oh - 0.5
    xs = (np.arange(ow) + 0.5) * w / ow - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0).astype(np.float32)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0).astype(np.float32)[None, :]
    # separable: interpolate rows first (while width is still the crop width)
    frames = np.ascontiguousarray(frames)
    top = frames[:, :, y0, :]
    rows = top + (frames[:, :, y1, :] - top) * fy[:, 0][:, None]
    left = rows[:, :, :, x0]
    return left + (rows[:, :, :, x1] - left) * fx


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian truncated at radius ceil(3*sigma)."""
    r = int(np.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return (k / k.sum()).astype(np.float32)


def _blur(frames: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return frames
    k = gaussian_kernel(sigma)
    # ndimage "mirror" pads edges without repeating the border pixel
    out = ndimage.correlate1d(frames, k, axis=2, mode="mirror")
    return ndimage.correlate1d(out, k, axis=3, mode="mirror")


def apply(clip: VideoClip, params: AugmentParams,
          output_size: tuple[int, int] = (64, 64)) -> VideoClip:
    """Transform every frame of the clip with the same parameters."""
    top, left, ch, cw = params.crop_rect
    t, c, h, w = clip.frames.shape
    if top < 0 or left < 0 or top + ch > h or left + cw > w:
        raise IndexError(f"crop rect {params.crop_rect} outside {h}x{w} frame")
    x = clip.frames[:, :, top:top + ch, left:left + cw]
    x = _resize_bilinear(x, output_size)
    if params.flip:
        x = x[:, :, :, ::-1]
    x = _blur(x, params.blur_sigma)
    if params.brightness:
        x = x + params.brightness
    if params.contrast:
        mean = x.mean()
        x = mean + (x - mean) * (1.0 + params.contrast)
    if params.saturation:
        gray = x.mean(axis=1, keepdims=True)
        x = gray + (x - gray) * (1.0 + params.saturation)
    x = np.clip(x, 0.0, 1.0)
    return VideoClip(frames=np.ascontiguousarray(x, dtype=np.float32),
                     video_id=clip.video_id, start_frame=clip.start_frame,
                     fps=clip.fps)


def two_views(clip: VideoClip, policy: AugmentPolicy,
              rng: np.random.Generator) -> tuple[VideoClip, VideoClip]:
    """Two independent draws applied to the same clip -> the positive pair."""
    hw = clip.frames.shape[2:]
    pq = sample_params(policy, rng, hw)
    pk = sample_params(policy, rng, hw)
    return (apply(clip, pq, policy.output_size),
            apply(clip, pk, policy.output_size))
