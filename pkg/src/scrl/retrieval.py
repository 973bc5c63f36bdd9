"""Gallery indexing, cosine top-k search, and R@k / mAP evaluation.

The gallery is built from the second screening of every pair: either
every sliding window ("sliding" mode) or the annotated target clips plus
non-overlapping distractor windows ("annotated" mode). Relevance of a
gallery window to a query is temporal IoU >= the threshold against the
query's annotated target interval, inside the target video.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import VideoCache, pair_video_ids
from .model import ModelConfig, embed_clip_frames, params_from_arrays
from .video import segment_length

CIDX_MAGIC = b"CIDX"
DEFAULT_IOU = 0.5
ANNOTATED_DISTRACTOR_STRIDE = 32


@dataclass
class GalleryIndex:
    video_ids: list[str]
    starts: np.ndarray        # (n,) int
    embeddings: np.ndarray    # (n, d_emb) unit-norm float32
    clip_len: int

    def __len__(self):
        return len(self.video_ids)


@dataclass
class QueryResult:
    query: dict
    ranked_entries: list[int]      # gallery indices, best first
    relevant: np.ndarray           # bool per rank position
    scores: np.ndarray

    @property
    def first_relevant_rank(self):
        hits = np.flatnonzero(self.relevant)
        return int(hits[0]) + 1 if hits.size else None


@dataclass
class RetrievalReport:
    results: list[QueryResult]
    recall_at: dict[int, float]
    map_score: float
    excluded_queries: int = 0


def temporal_iou(a_start, a_len, b_start, b_len) -> float:
    inter = max(0, min(a_start + a_len, b_start + b_len) - max(a_start, b_start))
    union = a_len + b_len - inter
    return inter / union if union else 0.0


def relevance(entry_video: str, entry_start: int, clip_len: int, query: dict,
              iou_threshold: float = DEFAULT_IOU) -> bool:
    if entry_video != query["target_video"]:
        return False
    return temporal_iou(entry_start, clip_len, query["target_start"],
                        query["target_len"]) >= iou_threshold


def _embed_params(checkpoint_arrays, model_cfg):
    arrays = {k: v for k, v in checkpoint_arrays.items()
              if k.startswith(("enc.", "head."))}
    return params_from_arrays(arrays, requires_grad=False)


def _center_window(start: int, length: int, clip_len: int, num_frames: int) -> int:
    s = start + (length - clip_len) // 2
    return int(np.clip(s, 0, num_frames - clip_len))


def build_index(checkpoint_arrays: dict, manifest: dict, corpus_dir,
                clip_len: int = 16, stride: int = 16, mode: str = "sliding",
                model_cfg: ModelConfig | None = None) -> GalleryIndex:
    """Embed the gallery windows of every second-screening video."""
    if mode not in ("sliding", "annotated"):
        raise ValueError(f"unknown gallery mode '{mode}'")
    if model_cfg is None:
        model_cfg = ModelConfig()
    params = _embed_params(checkpoint_arrays, model_cfg)
    cache = VideoCache(corpus_dir)
    windows: list[tuple[str, int]] = []
    for i in range(len(manifest["pairs"])):
        _, vid_b = pair_video_ids(manifest, i)
        n = cache.num_frames(vid_b)
        if mode == "sliding":
            windows.extend((vid_b, s) for s, _ in segment_length(n, clip_len, stride))
        else:
            targets = [q for q in manifest["queries"]
                       if q["target_video"] == vid_b]
            for q in targets:
                windows.append((vid_b, _center_window(
                    q["target_start"], q["target_len"], clip_len, n)))
            for s, e in segment_length(n, clip_len, ANNOTATED_DISTRACTOR_STRIDE):
                if all(temporal_iou(s, clip_len, q["target_start"],
                                    q["target_len"]) == 0.0 for q in targets):
                    windows.append((vid_b, s))
    if not windows:
        raise ValueError("gallery is empty; check manifest and clip_len")
    embs = np.stack([embed_clip_frames(params, model_cfg,
                                       cache.clip(vid, s, clip_len))
                     for vid, s in windows])
    return GalleryIndex(video_ids=[w[0] for w in windows],
                        starts=np.array([w[1] for w in windows], dtype=np.int64),
                        embeddings=embs.astype(np.float32), clip_len=clip_len)


def query_topk(index: GalleryIndex, query_embedding: np.ndarray,
               k: int) -> list[tuple[int, float]]:
    """Top-k gallery indices by dot product; ties broken by insertion order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = index.embeddings @ np.asarray(query_embedding, dtype=np.float32)
    order = np.argsort(-scores, kind="stable")[:k]
    return [(int(i), float(scores[i])) for i in order]


def recall_at_k(relevance_lists: list[np.ndarray], k: int) -> float:
    """Fraction of queries with >= 1 relevant item in the top k."""
    kept = [r for r in relevance_lists if r.any()]
    if len(kept) < len(relevance_lists):
        warnings.warn(f"{len(relevance_lists) - len(kept)} queries with no "
                      "relevant gallery item excluded from recall")
    if not kept:
        raise ValueError("no query has a relevant gallery item")
    return float(np.mean([r[:k].any() for r in kept]))


def average_precision(rel: np.ndarray) -> float:
    """AP over one ranked relevance list: mean of precision at relevant ranks."""
    ranks = np.flatnonzero(rel) + 1
    if ranks.size == 0:
        return 0.0
    precisions = np.arange(1, ranks.size + 1) / ranks
    return float(precisions.mean())


def mean_ap(relevance_lists: list[np.ndarray]) -> float:
    kept = [r for r in relevance_lists if r.any()]
    if len(kept) < len(relevance_lists):
        warnings.warn(f"{len(relevance_lists) - len(kept)} queries with no "
                      "relevant gallery item excluded from mAP")
    if not kept:
        raise ValueError("no query has a relevant gallery item")
    return float(np.mean([average_precision(r) for r in kept]))


def evaluate(checkpoint_arrays: dict, manifest: dict, corpus_dir,
             clip_len: int = 16, stride: int = 16, mode: str = "sliding",
             iou_threshold: float = DEFAULT_IOU,
             model_cfg: ModelConfig | None = None) -> RetrievalReport:
    """Run every manifest query against the gallery and aggregate metrics."""
    if model_cfg is None:
        model_cfg = ModelConfig()
    index = build_index(checkpoint_arrays, manifest, corpus_dir,
                        clip_len=clip_len, stride=stride, mode=mode,
                        model_cfg=model_cfg)
    params = _embed_params(checkpoint_arrays, model_cfg)
    cache = VideoCache(corpus_dir)
    results, rel_lists = [], []
    excluded = 0
    for query in manifest["queries"]:
        n = cache.num_frames(query["video"])
        s = _center_window(query["start"], query["len"], clip_len, n)
        qemb = embed_clip_frames(params, model_cfg,
                                 cache.clip(query["video"], s, clip_len))
        ranked = query_topk(index, qemb, len(index))
        idxs = [i for i, _ in ranked]
        rel = np.array([relevance(index.video_ids[i], int(index.starts[i]),
                                  clip_len, query, iou_threshold)
                        for i in idxs], dtype=bool)
        scores = np.array([sc for _, sc in ranked])
        results.append(QueryResult(query=query, ranked_entries=idxs,
                                   relevant=rel, scores=scores))
        if rel.any():
            rel_lists.append(rel)
        else:
            excluded += 1
    if excluded:
        warnings.warn(f"{excluded} queries with no relevant gallery item excluded")
    if not rel_lists:
        raise ValueError("no query has a relevant gallery item")
    recall = {k: float(np.mean([r[:k].any() for r in rel_lists]))
              for k in (1, 5, 10)}
    return RetrievalReport(results=results, recall_at=recall,
                           map_score=float(np.mean([average_precision(r)
                                                    for r in rel_lists])),
                           excluded_queries=excluded)


# ---- persistence and reporting ------------------------------------------------

def save_index(path, index: GalleryIndex) -> None:
    """CIDX: magic, u32 count, u32 dim, per entry: u16 id length, id bytes,
    u32 start, dim float32 values."""
    with open(path, "wb") as fh:
        fh.write(CIDX_MAGIC)
        fh.write(struct.pack("<II", len(index), index.embeddings.shape[1]))
        for vid, start, emb in zip(index.video_ids, index.starts,
                                   index.embeddings):
            vb = vid.encode("utf-8")
            fh.write(struct.pack("<H", len(vb)))
            fh.write(vb)
            fh.write(struct.pack("<I", int(start)))
            fh.write(np.ascontiguousarray(emb, dtype="<f4").tobytes())


def load_index(path, clip_len: int = 16) -> GalleryIndex:
    with open(path, "rb") as fh:
        if fh.read(4) != CIDX_MAGIC:
            raise ValueError(f"{path}: not a CIDX index")
        count, dim = struct.unpack("<II", fh.read(8))
        vids, starts, embs = [], [], []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            vids.append(fh.read(nlen).decode("utf-8"))
            (start,) = struct.unpack("<I", fh.read(4))
            starts.append(start)
            embs.append(np.frombuffer(fh.read(4 * dim), dtype="<f4").copy())
    return GalleryIndex(video_ids=vids, starts=np.array(starts, dtype=np.int64),
                        embeddings=np.stack(embs), clip_len=clip_len)


def metrics_line(report: RetrievalReport) -> str:
    r = report.recall_at
    return (f"R@1={r[1]!r} R@5={r[5]!r} R@10={r[10]!r} "
            f"mAP={report.map_score!r}")


def write_report_csv(path, report: RetrievalReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query_video", "query_start", "target_video", "target_start",
                    "first_relevant_rank", "average_precision"])
        for res in report.results:
            q = res.query
            ap = average_precision(res.relevant) if res.relevant.any() else ""
            w.writerow([q["video"], q["start"], q["target_video"],
                        q["target_start"], res.first_relevant_rank,
                        repr(ap) if ap != "" else ""])
        w.writerow(["AGGREGATE", "", "", "", metrics_line(report), ""])


def write_report_svg(path, report: RetrievalReport) -> None:
    """Simple bar chart of R@1 / R@5 / R@10."""
    bars = [(f"R@{k}", report.recall_at[k]) for k in (1, 5, 10)]
    width, height, pad = 320, 200, 30
    bw = (width - 2 * pad) // len(bars)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}">']
    for i, (label, v) in enumerate(bars):
        h = (height - 2 * pad) * v
        x = pad + i * bw
        y = height - pad - h
        parts.append(f'<rect x="{x + 8}" y="{y:.1f}" width="{bw - 16}" '
                     f'height="{h:.1f}" fill="#4878a8"/>')
        parts.append(f'<text x="{x + bw // 2}" y="{height - pad + 14}" '
                     f'text-anchor="middle" font-size="11">{label}</text>')
        parts.append(f'<text x="{x + bw // 2}" y="{y - 4:.1f}" '
                     f'text-anchor="middle" font-size="10">{v:.3f}</text>')
    parts.append(f'<text x="{pad}" y="{pad - 12}" font-size="11">'
                 f'mAP={report.map_score:.4f}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
