"""Stage-2 momentum-contrast fine-tuning.

A query encoder (trained by backprop) and a momentum encoder (EMA of the
query encoder, never differentiated) embed two augmented views of each
clip. Keys go into a fixed-capacity FIFO queue that supplies negatives,
decoupling the dictionary size from the batch size.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentPolicy, two_views
from .data import VideoCache, clip_windows, split_video_ids
from .model import (ModelConfig, clone_params, embed, init_params,
                    load_checkpoint, save_checkpoint)
from .optim import AdamState, adam_step
from .pretrain import PlateauSchedule
from .tensor import Tensor, concat, log_softmax, no_grad
from .tokenizer import cubify, standardize_cubes
from .video import VideoClip


class QueueContractError(ValueError):
    """A key violated the unit-norm contract or exceeded capacity."""


class MoCoQueue:
    """Fixed-capacity FIFO ring buffer of unit-norm key embeddings."""

    def __init__(self, capacity: int, dim: int, dtype=np.float32):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.buf = np.zeros((capacity, dim), dtype=dtype)
        self.head = 0      # next write slot
        self.fill = 0

    def enqueue(self, keys: np.ndarray) -> None:
        keys = np.atleast_2d(np.asarray(keys))
        b = keys.shape[0]
        if b > self.capacity:
            raise QueueContractError(
                f"batch of {b} exceeds queue capacity {self.capacity}")
        norms = np.linalg.norm(keys, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-5):
            raise QueueContractError("keys must be unit-norm")
        idx = (self.head + np.arange(b)) % self.capacity
        self.buf[idx] = keys
        self.head = int((self.head + b) % self.capacity)
        self.fill = min(self.capacity, self.fill + b)

    def entries(self) -> np.ndarray:
        """Current contents, oldest first."""
        if self.fill < self.capacity:
            return self.buf[:self.fill].copy()
        return np.roll(self.buf, -self.head, axis=0)


def enqueue(queue: MoCoQueue, keys: np.ndarray) -> MoCoQueue:
    queue.enqueue(keys)
    return queue


def infonce_loss(q, k_pos, queue: MoCoQueue | np.ndarray | None,
                 temperature: float) -> Tensor:
    """Contrastive loss with one positive and the queue as negatives.

    q: (B, d) Tensor (or (d,)); k_pos: matching detached keys; the positive
    term is included in the denominator. Empty queue degenerates to 0.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if not isinstance(q, Tensor):
        q = Tensor(q)
    if q.ndim == 1:
        q = q.reshape(1, -1)
    k_pos = np.atleast_2d(np.asarray(k_pos if not isinstance(k_pos, Tensor)
                                     else k_pos.data))
    negatives = queue.entries() if isinstance(queue, MoCoQueue) else \
        (np.zeros((0, q.shape[1]), dtype=q.data.dtype) if queue is None
         else np.asarray(queue))
    pos = (q * Tensor(k_pos.astype(q.data.dtype))).sum(axis=1, keepdims=True)
    if negatives.shape[0]:
        neg = q @ Tensor(negatives.astype(q.data.dtype).T)
        logits = concat([pos, neg], axis=1) * (1.0 / temperature)
    else:
        logits = pos * (1.0 / temperature)
    return -log_softmax(logits, axis=1).gather_axis1(
        np.zeros((q.shape[0], 1), dtype=np.intp)).mean()


def momentum_update(theta_k: dict[str, Tensor], theta_q: dict[str, Tensor],
                    m: float) -> dict[str, Tensor]:
    """theta_k <- m*theta_k + (1-m)*theta_q, elementwise, outside the graph."""
    if not 0.0 <= m < 1.0:
        raise ValueError("momentum must be in [0, 1)")
    if set(theta_k) != set(theta_q):
        raise ValueError("parameter sets differ")
    for name, tk in theta_k.items():
        tq = theta_q[name]
        if tk.shape != tq.shape:
            raise ValueError(f"shape mismatch for '{name}'")
        tk.data *= m
        tk.data += (1.0 - m) * tq.data
    return theta_k


@dataclass
class ContrastConfig:
    temperature: float = 0.07
    momentum: float = 0.999
    queue_capacity: int = 1024
    epochs: int = 50
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-5
    patience: int = 10
    min_delta: float = 1e-4
    seed: int = 0
    clip_len: int = 16
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)

    @property
    def stride(self):
        return self.clip_len // 2

    def validate(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.queue_capacity < self.batch_size:
            raise ValueError("queue capacity must be >= batch size")


def _view_tokens(cache, batch, clip_len, policy, rng):
    """Augment each clip twice and cubify both views."""
    toks_q, toks_k = [], []
    for vid, start in batch:
        clip = VideoClip(frames=cache.clip(vid, start, clip_len), video_id=vid,
                         start_frame=start)
        vq, vk = two_views(clip, policy, rng)
        toks_q.append(standardize_cubes(cubify(vq.frames).cubes))
        toks_k.append(standardize_cubes(cubify(vk.frames).cubes))
    return np.stack(toks_q), np.stack(toks_k)


def contrast_batch_loss(theta_q, theta_k, queue, model_cfg, cfg, toks_q, toks_k):
    """(loss Tensor, keys ndarray, mean_pos_sim, mean_neg_sim)."""
    with no_grad():
        keys = embed(theta_k, model_cfg, toks_k).data
    q = embed(theta_q, model_cfg, toks_q)
    loss = infonce_loss(q, keys, queue, cfg.temperature)
    pos_sim = float((q.data * keys).sum(axis=1).mean())
    negs = queue.entries()
    neg_sim = float((q.data @ negs.T).mean()) if negs.shape[0] else 0.0
    return loss, keys, pos_sim, neg_sim


def finetune_epoch(theta_q, theta_k, queue: MoCoQueue, model_cfg: ModelConfig,
                   cache: VideoCache, clips, cfg: ContrastConfig,
                   state: AdamState, rng: np.random.Generator) -> dict:
    """One shuffled pass; returns epoch stats."""
    order = rng.permutation(len(clips))
    losses, pos_sims, neg_sims = [], [], []
    for lo in range(0, len(order), cfg.batch_size):
        batch = [clips[i] for i in order[lo:lo + cfg.batch_size]]
        toks_q, toks_k = _view_tokens(cache, batch, cfg.clip_len, cfg.policy, rng)
        for p in theta_q.values():
            p.zero_grad()
        loss, keys, pos_sim, neg_sim = contrast_batch_loss(
            theta_q, theta_k, queue, model_cfg, cfg, toks_q, toks_k)
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"non-finite contrastive loss on batch {batch}")
        loss.backward()
        grads = {k: p.grad for k, p in theta_q.items() if p.grad is not None}
        adam_step(theta_q, grads, state)
        momentum_update(theta_k, theta_q, cfg.momentum)
        queue.enqueue(keys)
        losses.append(loss.item())
        pos_sims.append(pos_sim)
        neg_sims.append(neg_sim)
    return {"loss": float(np.mean(losses)),
            "pos_sim": float(np.mean(pos_sims)),
            "neg_sim": float(np.mean(neg_sims)),
            "queue_fill": queue.fill}


def _val_loss(theta_q, theta_k, queue, model_cfg, cache, clips, cfg) -> float:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 962]))
    losses = []
    for lo in range(0, len(clips), cfg.batch_size):
        batch = clips[lo:lo + cfg.batch_size]
        toks_q, toks_k = _view_tokens(cache, batch, cfg.clip_len, cfg.policy, rng)
        with no_grad():
            loss, _, _, _ = contrast_batch_loss(
                theta_q, theta_k, queue, model_cfg, cfg, toks_q, toks_k)
        losses.append(loss.item())
    return float(np.mean(losses))


def init_query_params(model_cfg: ModelConfig, rng, stage1_checkpoint=None
                      ) -> dict[str, Tensor]:
    """Fresh encoder + projection head; encoder weights (cube projection,
    positions, blocks) overridden from the stage-1 checkpoint when given."""
    params = init_params(model_cfg, rng)
    params = {k: v for k, v in params.items() if not k.startswith("dec.")}
    if stage1_checkpoint is not None:
        arrays = load_checkpoint(stage1_checkpoint)
        for name, arr in arrays.items():
            if name.startswith("enc."):
                if name not in params or params[name].shape != arr.shape:
                    raise ValueError(f"checkpoint tensor '{name}' does not fit model")
                params[name].data = arr.astype(params[name].data.dtype).copy()
    return params


def run_finetuning(cfg: ContrastConfig, corpus_dir, manifest: dict, out_dir,
                   stage1_checkpoint=None, model_cfg: ModelConfig | None = None
                   ) -> Path:
    """Fine-tune from the stage-1 encoder (or from scratch when
    stage1_checkpoint is None); returns the best-val checkpoint path."""
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

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    theta_q = init_query_params(model_cfg, rng, stage1_checkpoint)
    theta_k = clone_params(theta_q, requires_grad=False)
    queue = MoCoQueue(cfg.queue_capacity, model_cfg.d_emb)
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = PlateauSchedule(cfg.lr, cfg.patience, cfg.min_delta)

    ckpt_path = out_dir / "contrast_best.ckpt"
    best_val = np.inf
    log_rows = []
    for epoch in range(1, cfg.epochs + 1):
        state.lr = sched.lr
        stats = finetune_epoch(theta_q, theta_k, queue, model_cfg, cache,
                               train_clips, cfg, state, rng)
        val_loss = _val_loss(theta_q, theta_k, queue, model_cfg, cache,
                             val_clips, cfg)
        sched.step(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            save_checkpoint(ckpt_path, theta_q)
        log_rows.append((epoch, stats["loss"], val_loss, sched.lr,
                         stats["queue_fill"], stats["pos_sim"], stats["neg_sim"]))
    with open(out_dir / "contrast_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr", "queue_fill",
                    "mean_pos_sim", "mean_neg_sim"])
        for r in log_rows:
            w.writerow([r[0], repr(r[1]), repr(r[2]), repr(r[3]), r[4],
                        repr(r[5]), repr(r[6])])
    if not ckpt_path.exists():
        save_checkpoint(ckpt_path, theta_q)
    return ckpt_path
