"""Close-ups of the three mechanisms the pipeline is built around:
tube masking, the InfoNCE loss with a momentum queue, and the temporal
retrieval metrics. Each section checks itself against a closed form.

Usage: python demos/pipeline_anatomy.py
"""

import math

import numpy as np

from scrl.contrast import MoCoQueue, infonce_loss, momentum_update
from scrl.retrieval import average_precision, relevance, temporal_iou
from scrl.tensor import Tensor
from scrl.tokenizer import sample_tube_mask


def tube_masking() -> None:
    # A 16x64x64 clip tokenizes to an 8x4x4 grid of 2-frame cubes. Tube
    # masking hides whole spatial columns: the same 4x4 pattern at every
    # time step, so the model can't peek at a hidden patch in a
    # neighboring frame.
    rng = np.random.default_rng(0)
    mask = sample_tube_mask((8, 4, 4), 0.9, rng)
    print("spatial mask (True = hidden):")
    print(mask.spatial_mask.astype(int))
    per_step = mask.token_mask().reshape(8, 16)
    print(f"masked {mask.spatial_mask.sum()}/16 positions "
          f"(ratio 0.9 -> round(14.4) = 14)")
    print(f"identical across all 8 time steps: "
          f"{bool((per_step == per_step[0]).all())}")


def contrastive_loss() -> None:
    # When the query is equally similar to its positive and to every
    # queued negative, InfoNCE is exactly ln(K+1): pure chance over K+1
    # candidates. Making the positive stand out drops the loss.
    d, K, tau = 8, 3, 0.2
    v = np.zeros(d)
    v[0] = 1.0
    q = Tensor(v[None, :], requires_grad=True)
    same = np.tile(v, (K, 1))
    loss = infonce_loss(q, v[None, :], same, tau)
    print(f"uniform similarities: loss = {loss.item():.6f}, "
          f"ln(K+1) = {math.log(K + 1):.6f}")

    opposite = -same
    loss = infonce_loss(q, v[None, :], opposite, tau)
    print(f"negatives pushed away: loss = {loss.item():.6f}")

    # The key encoder trails the query encoder as an EMA; after n steps
    # toward a fixed target the gap shrinks by m^n.
    theta_q = {"w": Tensor(np.ones(4))}
    theta_k = {"w": Tensor(np.zeros(4))}
    for _ in range(100):
        momentum_update(theta_k, theta_q, 0.999)
    print(f"EMA gap after 100 steps at m=0.999: "
          f"{1 - theta_k['w'].data[0]:.6f} (0.999^100 = {0.999**100:.6f})")

    # Keys retire in arrival order once the queue is full.
    queue = MoCoQueue(capacity=2, dim=d)
    for row in np.eye(3, d):
        queue.enqueue(row[None, :])
    print(f"FIFO queue of 2 after pushing e0,e1,e2 holds rows with "
          f"argmax {queue.entries().argmax(axis=1).tolist()} (e0 evicted)")


def retrieval_metrics() -> None:
    # A gallery window counts as a hit when it overlaps the annotated
    # target interval by IoU >= 0.5 in the right video.
    print(f"IoU of [8,24) vs [16,32): {temporal_iou(8, 16, 16, 16):.4f} "
          f"(8 shared / 24 spanned)")
    query = {"target_video": "v", "target_start": 16, "target_len": 32}
    for start in (16, 24, 40):
        hit = relevance("v", start, 16, query)
        print(f"  window [{start},{start + 16}) relevant: {hit}")

    # Average precision from a ranked relevance list: relevant results at
    # ranks 1, 3, 5 give mean(1/1, 2/3, 3/5).
    rel = np.array([1, 0, 1, 0, 1, 0], dtype=bool)
    expected = (1 / 1 + 2 / 3 + 3 / 5) / 3
    print(f"AP of [1,0,1,0,1,0] = {average_precision(rel):.6f} "
          f"(hand value {expected:.6f})")


def main() -> None:
    tube_masking()
    print()
    contrastive_loss()
    print()
    retrieval_metrics()


if __name__ == "__main__":
    main()
