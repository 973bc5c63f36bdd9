"""Stage-1 pre-training: tube-mask, encode visible, decode, masked MSE.

Per clip: cubify -> sample_tube_mask -> split_visible -> encode -> decode
-> normalize_targets -> masked MSE -> Adam step. The learning rate decays
by 1/10 when validation loss plateaus, at most twice.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import VideoCache, clip_windows, split_video_ids
from .model import ModelConfig, init_params, params_from_arrays, save_checkpoint
from .model import decode, encode_visible, load_checkpoint
from .optim import AdamState, adam_step
from .tensor import Tensor
from .tokenizer import (cubify, normalize_targets, sample_tube_mask,
                        split_visible, standardize_cubes)


@dataclass
class PretrainConfig:
    mask_ratio: float = 0.9
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-5
    patience: int = 10
    min_delta: float = 1e-4
    seed: int = 0
    clip_len: int = 16
    stride: int = 16

    def validate(self):
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must be in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


class PlateauSchedule:
    """Divide lr by 10 after `patience` consecutive non-improving epochs.

    An epoch improves when val loss drops below the best seen so far by more
    than min_delta. At most two decays ever fire.
    """

    def __init__(self, lr: float, patience: int, min_delta: float,
                 max_decays: int = 2):
        self.lr = lr
        self.patience = patience
        self.min_delta = min_delta
        self.max_decays = max_decays
        self.best = np.inf
        self.stale = 0
        self.decays = 0

    def step(self, val_loss: float) -> bool:
        """Record one epoch's val loss; returns True if lr decayed now."""
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.stale = 0
            return False
        self.stale += 1
        if self.stale >= self.patience and self.decays < self.max_decays:
            self.lr /= 10.0
            self.decays += 1
            self.stale = 0
            return True
        return False


def mse_masked_loss(reconstructed: Tensor, targets) -> Tensor:
    """Mean squared error over every element of the masked cubes."""
    targets = np.asarray(targets)
    if tuple(reconstructed.shape) != targets.shape:
        raise ValueError(f"shape mismatch {reconstructed.shape} vs {targets.shape}")
    if targets.size == 0:
        warnings.warn("masked set is empty; loss defined as 0")
        return Tensor(np.zeros((), dtype=np.float32))
    diff = reconstructed - Tensor(targets.astype(reconstructed.data.dtype))
    return (diff * diff).mean()


def _batch_arrays(cache, batch, clip_len, mask_ratio, rng):
    """Stack cubes/masks/targets for a batch of (video_id, start) windows."""
    vis_cubes, vis_idx, mask_idx, targets = [], [], [], []
    for vid, start in batch:
        grid = cubify(cache.clip(vid, start, clip_len))
        mask = sample_tube_mask(grid.grid_dims, mask_ratio, rng)
        cubes_v, iv, im = split_visible(grid, mask)
        vis_cubes.append(standardize_cubes(cubes_v))
        vis_idx.append(iv)
        mask_idx.append(im)
        targets.append(normalize_targets(grid, mask))
    return (np.stack(vis_cubes), np.stack(vis_idx), np.stack(mask_idx),
            np.stack(targets))


def _forward_loss(params, model_cfg, cache, batch, clip_len, mask_ratio, rng):
    cubes, vis_idx, mask_idx, targets = _batch_arrays(
        cache, batch, clip_len, mask_ratio, rng)
    encoded = encode_visible(params, model_cfg, cubes, vis_idx)
    rec = decode(params, model_cfg, encoded, vis_idx, mask_idx)
    return mse_masked_loss(rec, targets)


def _batches(items, size):
    return [items[i:i + size] for i in range(0, len(items), size)]


def pretrain_epoch(params, model_cfg: ModelConfig, cache: VideoCache,
                   clips, cfg: PretrainConfig, state: AdamState,
                   rng: np.random.Generator) -> float:
    """One seeded-shuffle pass over the clip list; returns mean train loss."""
    order = rng.permutation(len(clips))
    losses = []
    for batch_ids in _batches(order, cfg.batch_size):
        batch = [clips[i] for i in batch_ids]
        for p in params.values():
            p.zero_grad()
        loss = _forward_loss(params, model_cfg, cache, batch, cfg.clip_len,
                             cfg.mask_ratio, rng)
        if not np.isfinite(loss.data):
            raise FloatingPointError(
                f"non-finite pre-training loss on batch {batch}")
        loss.backward()
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
        adam_step(params, grads, state)
        losses.append(loss.item())
    return float(np.mean(losses))


def _eval_loss(params, model_cfg, cache, clips, cfg) -> float:
    from .tensor import no_grad
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 961]))
    losses = []
    with no_grad():
        for batch in _batches(clips, cfg.batch_size):
            loss = _forward_loss(params, model_cfg, cache, batch, cfg.clip_len,
                                 cfg.mask_ratio, rng)
            losses.append(loss.item())
    return float(np.mean(losses))


def run_pretraining(cfg: PretrainConfig, corpus_dir, manifest: dict, out_dir,
                    model_cfg: ModelConfig | None = None,
                    init_checkpoint=None) -> Path:
    """Train on the train split, schedule lr on the val split, save best-val
    checkpoint; returns its path. Also writes pretrain_log.csv."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model_cfg is None:
        model_cfg = ModelConfig()
    cache = VideoCache(corpus_dir)
    train_clips = clip_windows(cache, split_video_ids(manifest, "train"),
                               cfg.clip_len, cfg.stride)
    val_clips = clip_windows(cache, split_video_ids(manifest, "val"),
                             cfg.clip_len, cfg.stride)
    if not train_clips or not val_clips:
        raise ValueError("train and val splits must both be non-empty")

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    if init_checkpoint is not None:
        params = params_from_arrays(load_checkpoint(init_checkpoint))
    else:
        params = init_params(model_cfg, rng)
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = PlateauSchedule(cfg.lr, cfg.patience, cfg.min_delta)

    ckpt_path = out_dir / "pretrain_best.ckpt"
    best_val = np.inf
    log_rows = []
    for epoch in range(1, cfg.epochs + 1):
        state.lr = sched.lr
        train_loss = pretrain_epoch(params, model_cfg, cache, train_clips,
                                    cfg, state, rng)
        val_loss = _eval_loss(params, model_cfg, cache, val_clips, cfg)
        sched.step(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            save_checkpoint(ckpt_path, params)
        log_rows.append((epoch, train_loss, val_loss, sched.lr))
    with open(out_dir / "pretrain_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in log_rows:
            w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
    if not ckpt_path.exists():
        save_checkpoint(ckpt_path, params)
    return ckpt_path
