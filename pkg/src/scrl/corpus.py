"""Synthetic paired-screening corpus generator and manifest handling.

Each pair renders two videos from one shared latent "texture trajectory":
a procedural band-noise background driven by drifting plane waves, plus
localized blob patterns ("polyps") that appear during annotated intervals.
Screening B re-renders the same trajectory with perturbed viewpoint
(spatial shift), illumination (brightness drift, flicker, channel gains),
optics (Gaussian blur), sensor noise, temporal jitter, and per-wave phase
offsets that decorrelate the fine background texture while keeping the
wave directions, temporal frequencies, and polyp events shared. All
magnitudes scale linearly with ``landmark_noise``; at zero noise both
screenings are pixel-identical. The phase offsets matter: without them a
raw-pixel match between screenings is near-perfect and retrieval is
trivial even for an untrained encoder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .video import write_video

QUERY_LEN = 32          # annotated interval length, frames
CANVAS_MARGIN = 8       # render margin eaten by viewpoint shift
MAX_JITTER = 40         # frames, at landmark_noise = 1
MAX_SHIFT = 30          # pixels before clamping to the margin, at noise = 1
MAX_BRIGHTNESS = 0.8    # additive delta at noise = 1
MAX_PHASE = 8 * np.pi   # per-wave phase offset at noise = 1
MAX_ROT = 2.0           # per-wave wavevector rotation (radians) at noise = 1
MAX_OMEGA = 1.0         # relative temporal-frequency perturbation at noise = 1
MAX_MIX = 3.0           # relative per-wave color-mix perturbation at noise = 1
MAX_GAIN = 2.0          # relative per-channel gain perturbation at noise = 1
MAX_BLUR = 5.0          # Gaussian blur sigma (pixels) at noise = 1
MAX_SENSOR = 0.3        # iid pixel-noise sigma at noise = 1
N_WAVES = 16


class InvalidConfigError(ValueError):
    pass


@dataclass
class GeneratorConfig:
    seed: int = 0
    n_pairs: int = 10
    frames_per_video: int = 600
    height: int = 64
    width: int = 64
    n_polyps_per_video: int = 2
    landmark_noise: float = 0.1

    def validate(self):
        if min(self.n_pairs, self.frames_per_video, self.height, self.width,
               self.n_polyps_per_video) < 1:
            raise InvalidConfigError("all counts must be >= 1")
        if self.landmark_noise < 0:
            raise InvalidConfigError("landmark_noise must be >= 0")
        if self.height % 16 or self.width % 16:
            raise InvalidConfigError("height and width must be multiples of 16")
        if self.frames_per_video % 2:
            raise InvalidConfigError("frames_per_video must be even")
        span = self.frames_per_video - MAX_JITTER - QUERY_LEN - MAX_JITTER
        if span < self.n_polyps_per_video * (QUERY_LEN + 16):
            raise InvalidConfigError(
                "frames_per_video too short for the requested polyp count")


def _split_pairs(n_pairs: int) -> dict[str, list[int]]:
    """70/10/20 train/val/test by pair index; every split non-empty when possible."""
    n_train = max(1, round(0.7 * n_pairs))
    n_val = max(1, round(0.1 * n_pairs)) if n_pairs >= 3 else (1 if n_pairs == 2 else 0)
    n_train = min(n_train, n_pairs - n_val - (1 if n_pairs >= 3 else 0))
    idx = list(range(n_pairs))
    return {
        "train": idx[:n_train],
        "val": idx[n_train:n_train + n_val],
        "test": idx[n_train + n_val:],
    }


class _PairLatent:
    """Shared generative state for one screening pair."""

    def __init__(self, rng: np.random.Generator, cfg: GeneratorConfig):
        ch, cw = cfg.height + 2 * CANVAS_MARGIN, cfg.width + 2 * CANVAS_MARGIN
        self.grid_yy, self.grid_xx = np.mgrid[0:ch, 0:cw].astype(np.float64)
        self.canvas_hw = (ch, cw)
        self.omegas = rng.uniform(0.03, 0.18, size=N_WAVES)
        self.amps = rng.uniform(0.5, 1.0, size=N_WAVES)
        self.mix = rng.uniform(0.1, 1.0, size=(N_WAVES, 3))
        self.kvecs = np.empty((N_WAVES, 2))
        self.phis = np.empty(N_WAVES)
        for j in range(N_WAVES):
            kx = rng.uniform(0.08, 0.5) * rng.choice([-1.0, 1.0])
            ky = rng.uniform(0.08, 0.5) * rng.choice([-1.0, 1.0])
            self.kvecs[j] = (kx, ky)
            self.phis[j] = rng.uniform(0, 2 * np.pi)

        # polyp sites: non-overlapping latent-time windows, safely inside the video
        lo = MAX_JITTER + 8
        hi = cfg.frames_per_video - MAX_JITTER - QUERY_LEN - 8
        starts = []
        slot = (hi - lo) // cfg.n_polyps_per_video
        for i in range(cfg.n_polyps_per_video):
            starts.append(int(lo + i * slot + rng.integers(0, max(1, slot - QUERY_LEN))))
        self.polyps = []
        for s in starts:
            self.polyps.append({
                "start": s,
                "cy": float(rng.uniform(CANVAS_MARGIN + 10, ch - CANVAS_MARGIN - 10)),
                "cx": float(rng.uniform(CANVAS_MARGIN + 10, cw - CANVAS_MARGIN - 10)),
                "radius": float(rng.uniform(5.0, 10.0)),
                "color": rng.uniform(0.3, 0.65, size=3) * (rng.random(3) < 0.8),
            })
        # unit-scale perturbation draws for screening B; magnitudes applied later
        # so that landmark_noise never changes the draw sequence
        self.jitter_u = float(rng.uniform(-1, 1))
        self.shift_u = rng.uniform(-1, 1, size=2)
        self.bright_u = float(rng.uniform(-1, 1))
        self.flicker_phase = float(rng.uniform(0, 2 * np.pi))
        self.phase_u = rng.uniform(-1, 1, size=N_WAVES)
        self.mix_u = rng.uniform(-1, 1, size=(N_WAVES, 3))
        self.gain_u = rng.uniform(-1, 1, size=3)
        self.rot_u = rng.uniform(-1, 1, size=N_WAVES)
        self.omega_u = rng.uniform(-1, 1, size=N_WAVES)

    def render(self, times: np.ndarray, top: int, left: int, h: int, w: int,
               brightness: float = 0.0, flicker: float = 0.0,
               phase_offsets: np.ndarray | None = None,
               mix: np.ndarray | None = None,
               rotations: np.ndarray | None = None,
               omega_scale: np.ndarray | None = None) -> np.ndarray:
        """Render frames at the given latent times, cropped from the canvas."""
        t = np.asarray(times, dtype=np.float64)
        nt = t.size
        ch, cw = self.canvas_hw
        if phase_offsets is None:
            phase_offsets = np.zeros(N_WAVES)
        if mix is None:
            mix = self.mix
        if rotations is None:
            rotations = np.zeros(N_WAVES)
        if omega_scale is None:
            omega_scale = np.ones(N_WAVES)
        # per-channel RMS of the band-noise sum, so the rendered contrast is
        # independent of how many waves happen to light up a channel
        norm = np.sqrt(((self.amps[:, None] * mix) ** 2).sum(axis=0) / 2.0)
        acc = np.zeros((nt, 3, ch, cw))
        for j in range(N_WAVES):
            c, s = np.cos(rotations[j]), np.sin(rotations[j])
            kx = c * self.kvecs[j, 0] - s * self.kvecs[j, 1]
            ky = s * self.kvecs[j, 0] + c * self.kvecs[j, 1]
            grid = kx * self.grid_xx + ky * self.grid_yy + self.phis[j]
            wave = np.sin(grid[None, :, :] + phase_offsets[j]
                          + omega_scale[j] * self.omegas[j] * t[:, None, None])
            acc += self.amps[j] * wave[:, None, :, :] * mix[j][None, :, None, None]
        acc /= norm[None, :, None, None]
        frames = 0.5 + 0.15 * acc
        yy, xx = np.mgrid[0:ch, 0:cw].astype(np.float64)
        for p in self.polyps:
            rel = (t - p["start"]) / QUERY_LEN
            env = np.where((rel >= 0) & (rel < 1),
                           0.5 * (1 - np.cos(2 * np.pi * np.clip(rel, 0, 1))), 0.0)
            if not env.any():
                continue
            blob = np.exp(-((yy - p["cy"]) ** 2 + (xx - p["cx"]) ** 2)
                          / (2 * p["radius"] ** 2))
            frames += (env[:, None, None, None] * p["color"][None, :, None, None]
                       * blob[None, None, :, :])
        if flicker:
            frames += flicker * np.sin(0.21 * t + self.flicker_phase)[:, None, None, None]
        if brightness:
            frames += brightness
        out = frames[:, :, top:top + h, left:left + w]
        return np.clip(out, 0.0, 1.0).astype(np.float32)


def generate_paired_corpus(cfg: GeneratorConfig, out_dir) -> dict:
    """Render the corpus into ``out_dir`` and return the manifest dict.

    Byte-identical output for identical configs; also written to
    ``out_dir/manifest.json``.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    noise = cfg.landmark_noise
    pairs, queries = [], []
    times = np.arange(cfg.frames_per_video, dtype=np.float64)

    for i in range(cfg.n_pairs):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i]))
        latent = _PairLatent(rng, cfg)
        id_a, id_b = f"pair_{i:03d}_a", f"pair_{i:03d}_b"

        frames_a = latent.render(times, CANVAS_MARGIN, CANVAS_MARGIN,
                                 cfg.height, cfg.width)
        write_video(out_dir / f"{id_a}.cvid", frames_a)

        jitter = int(round(latent.jitter_u * MAX_JITTER * min(noise, 1.0)))
        dy = int(np.clip(round(latent.shift_u[0] * MAX_SHIFT * noise),
                         -CANVAS_MARGIN, CANVAS_MARGIN))
        dx = int(np.clip(round(latent.shift_u[1] * MAX_SHIFT * noise),
                         -CANVAS_MARGIN, CANVAS_MARGIN))
        mix_b = np.maximum(latent.mix * (1.0 + MAX_MIX * noise * latent.mix_u),
                           0.05)
        frames_b = latent.render(times + jitter, CANVAS_MARGIN + dy,
                                 CANVAS_MARGIN + dx, cfg.height, cfg.width,
                                 brightness=latent.bright_u * MAX_BRIGHTNESS * noise,
                                 flicker=0.25 * noise,
                                 phase_offsets=MAX_PHASE * noise * latent.phase_u,
                                 mix=mix_b,
                                 rotations=MAX_ROT * noise * latent.rot_u,
                                 omega_scale=1.0 + MAX_OMEGA * noise * latent.omega_u)
        if noise:
            x = frames_b.astype(np.float64)
            gains = 1.0 + MAX_GAIN * noise * latent.gain_u
            x *= gains[None, :, None, None]
            x = gaussian_filter(x, sigma=(0, 0, MAX_BLUR * noise, MAX_BLUR * noise),
                                mode="nearest")
            sensor_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i, 1]))
            x += MAX_SENSOR * noise * sensor_rng.standard_normal(x.shape)
            frames_b = np.clip(x, 0.0, 1.0).astype(np.float32)
        write_video(out_dir / f"{id_b}.cvid", frames_b)

        pairs.append({"a": f"{id_a}.cvid", "b": f"{id_b}.cvid"})
        for p in latent.polyps:
            queries.append({
                "video": id_a,
                "start": p["start"],
                "len": QUERY_LEN,
                "target_video": id_b,
                "target_start": p["start"] - jitter,
                "target_len": QUERY_LEN,
            })

    manifest = {
        "pairs": pairs,
        "queries": queries,
        "splits": _split_pairs(cfg.n_pairs),
        "config": asdict(cfg),
    }
    write_manifest(out_dir / "manifest.json", manifest)
    return manifest


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def video_path(corpus_dir, video_id: str) -> Path:
    return Path(corpus_dir) / f"{video_id}.cvid"


def split_pair_indices(manifest: dict, split: str) -> list[int]:
    return list(manifest["splits"][split])
