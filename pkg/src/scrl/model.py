"""Pre-norm transformer encoder, shallow decoder, and projection head.

All parameters live in a flat name -> Tensor dict so the optimizer, the
momentum update and the checkpoint format can treat them uniformly.
Names are prefixed ``enc.`` / ``dec.`` / ``head.``; only ``enc.*`` is
carried from stage-1 pre-training into stage-2 fine-tuning.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import (DimensionError, NonFiniteError, Tensor, concat,
                     layer_norm, softmax)

CKPT_MAGIC = b"CKPT"


@dataclass
class ModelConfig:
    cube_dim: int = 1536        # 2*16*16*C for C=3
    n_tokens: int = 128         # (T/2)*(H/16)*(W/16) for 16x3x64x64 clips
    d_enc: int = 96
    heads: int = 4
    depth_enc: int = 4
    d_dec: int = 48
    depth_dec: int = 1
    d_emb: int = 64


def _linear_init(rng, fan_in, fan_out, dtype):
    return (rng.standard_normal((fan_in, fan_out)) * 0.02).astype(dtype)


def _add_block(params, prefix, d, rng, dtype):
    params[f"{prefix}.ln1.g"] = np.ones(d, dtype=dtype)
    params[f"{prefix}.ln1.b"] = np.zeros(d, dtype=dtype)
    for nm in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.attn.{nm}"] = _linear_init(rng, d, d, dtype)
    # no key bias: softmax scores are invariant to it,
    # which would leave a structurally zero gradient
    for nm in ("bq", "bv", "bo"):
        params[f"{prefix}.attn.{nm}"] = np.zeros(d, dtype=dtype)
    params[f"{prefix}.ln2.g"] = np.ones(d, dtype=dtype)
    params[f"{prefix}.ln2.b"] = np.zeros(d, dtype=dtype)
    params[f"{prefix}.mlp.w1"] = _linear_init(rng, d, 4 * d, dtype)
    params[f"{prefix}.mlp.b1"] = np.zeros(4 * d, dtype=dtype)
    params[f"{prefix}.mlp.w2"] = _linear_init(rng, 4 * d, d, dtype)
    params[f"{prefix}.mlp.b2"] = np.zeros(d, dtype=dtype)


def init_params(cfg: ModelConfig, rng: np.random.Generator,
                dtype=np.float32) -> dict[str, Tensor]:
    p: dict[str, np.ndarray] = {}
    p["enc.cube_proj.w"] = _linear_init(rng, cfg.cube_dim, cfg.d_enc, dtype)
    p["enc.cube_proj.b"] = np.zeros(cfg.d_enc, dtype=dtype)
    p["enc.pos"] = (rng.standard_normal((cfg.n_tokens, cfg.d_enc)) * 0.02).astype(dtype)
    for i in range(cfg.depth_enc):
        _add_block(p, f"enc.block{i}", cfg.d_enc, rng, dtype)
    p["enc.ln_out.g"] = np.ones(cfg.d_enc, dtype=dtype)
    p["enc.ln_out.b"] = np.zeros(cfg.d_enc, dtype=dtype)

    p["dec.proj.w"] = _linear_init(rng, cfg.d_enc, cfg.d_dec, dtype)
    p["dec.proj.b"] = np.zeros(cfg.d_dec, dtype=dtype)
    p["dec.mask_token"] = (rng.standard_normal(cfg.d_dec) * 0.02).astype(dtype)
    p["dec.pos"] = (rng.standard_normal((cfg.n_tokens, cfg.d_dec)) * 0.02).astype(dtype)
    for i in range(cfg.depth_dec):
        _add_block(p, f"dec.block{i}", cfg.d_dec, rng, dtype)
    p["dec.ln_out.g"] = np.ones(cfg.d_dec, dtype=dtype)
    p["dec.ln_out.b"] = np.zeros(cfg.d_dec, dtype=dtype)
    p["dec.head.w"] = _linear_init(rng, cfg.d_dec, cfg.cube_dim, dtype)
    p["dec.head.b"] = np.zeros(cfg.cube_dim, dtype=dtype)

    p["head.w1"] = _linear_init(rng, cfg.d_enc, cfg.d_enc, dtype)
    p["head.b1"] = np.zeros(cfg.d_enc, dtype=dtype)
    p["head.w2"] = _linear_init(rng, cfg.d_enc, cfg.d_emb, dtype)
    p["head.b2"] = np.zeros(cfg.d_emb, dtype=dtype)
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def clone_params(params: dict[str, Tensor], requires_grad=False) -> dict[str, Tensor]:
    return {k: Tensor(v.data.copy(), requires_grad=requires_grad)
            for k, v in params.items()}


# ---- forward pieces ---------------------------------------------------------

def _attention(params, prefix, x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    dh = d // heads
    q = (x @ params[f"{prefix}.wq"] + params[f"{prefix}.bq"]) \
        .reshape(b, n, heads, dh).transpose(0, 2, 1, 3)
    k = (x @ params[f"{prefix}.wk"]) \
        .reshape(b, n, heads, dh).transpose(0, 2, 1, 3)
    v = (x @ params[f"{prefix}.wv"] + params[f"{prefix}.bv"]) \
        .reshape(b, n, heads, dh).transpose(0, 2, 1, 3)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    out = softmax(scores, axis=-1) @ v
    out = out.transpose(0, 2, 1, 3).reshape(b, n, d)
    return out @ params[f"{prefix}.wo"] + params[f"{prefix}.bo"]


def _transformer(params, stem: str, x: Tensor, depth: int, heads: int) -> Tensor:
    for i in range(depth):
        pre = f"{stem}.block{i}"
        try:
            h = layer_norm(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
            x = x + _attention(params, f"{pre}.attn", h, heads)
            h = layer_norm(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
            h = (h @ params[f"{pre}.mlp.w1"] + params[f"{pre}.mlp.b1"]).gelu()
            x = x + (h @ params[f"{pre}.mlp.w2"] + params[f"{pre}.mlp.b2"])
        except NonFiniteError as e:
            raise NonFiniteError(f"non-finite activation in {pre}: {e}") from e
    if depth > 0:
        x = layer_norm(x, params[f"{stem}.ln_out.g"], params[f"{stem}.ln_out.b"])
    return x


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def encode_visible(params: dict[str, Tensor], cfg: ModelConfig,
                   tokens, positions) -> Tensor:
    """Encode a batch of visible-token sets.

    tokens: (B, n, D_cube); positions: (B, n) integer token indices into the
    positional table. Returns (B, n, d_enc).
    """
    tokens = _as_tensor(tokens)
    positions = np.asarray(positions)
    if positions.max() >= cfg.n_tokens:
        raise DimensionError("position index outside positional table")
    x = tokens @ params["enc.cube_proj.w"] + params["enc.cube_proj.b"]
    x = x + params["enc.pos"].gather_rows(positions)
    return _transformer(params, "enc", x, cfg.depth_enc, cfg.heads)


def decode(params: dict[str, Tensor], cfg: ModelConfig, encoded: Tensor,
           visible_idx, masked_idx) -> Tensor:
    """Reconstruct masked cubes from encoded visible tokens.

    encoded: (B, n_vis, d_enc); visible_idx/masked_idx: (B, n_vis)/(B, n_mask)
    token indices. Returns (B, n_mask, D_cube) read at the masked positions.
    """
    visible_idx = np.atleast_2d(np.asarray(visible_idx))
    masked_idx = np.atleast_2d(np.asarray(masked_idx))
    b, nv = visible_idx.shape
    nm = masked_idx.shape[1]
    for bi in range(b):
        if np.intersect1d(visible_idx[bi], masked_idx[bi]).size:
            raise ValueError("visible and masked index sets overlap")
    if nm == 0:
        return Tensor(np.zeros((b, 0, cfg.cube_dim), dtype=encoded.data.dtype))
    xv = encoded @ params["dec.proj.w"] + params["dec.proj.b"]
    zeros = Tensor(np.zeros((b, nm, cfg.d_dec), dtype=xv.data.dtype))
    mtok = zeros + params["dec.mask_token"].reshape(1, 1, cfg.d_dec)
    full = concat([xv, mtok], axis=1)
    order = np.concatenate([visible_idx, masked_idx], axis=1)
    full = full + params["dec.pos"].gather_rows(order)
    full = _transformer(params, "dec", full, cfg.depth_dec, cfg.heads)
    tail = np.broadcast_to(np.arange(nv, nv + nm), (b, nm))
    masked_out = full.gather_axis1(tail)
    return masked_out @ params["dec.head.w"] + params["dec.head.b"]


def embed(params: dict[str, Tensor], cfg: ModelConfig, tokens,
          positions=None) -> Tensor:
    """Full-grid encode -> mean pool -> projection head -> L2 normalize.

    tokens: (B, N_tok, D_cube). Returns (B, d_emb) unit-norm embeddings.
    """
    tokens = _as_tensor(tokens)
    b, n = tokens.shape[0], tokens.shape[1]
    if positions is None:
        positions = np.broadcast_to(np.arange(n), (b, n))
    x = encode_visible(params, cfg, tokens, positions)
    pooled = x.mean(axis=1)
    h = (pooled @ params["head.w1"] + params["head.b1"]).gelu()
    h = h @ params["head.w2"] + params["head.b2"]
    norm = (h * h).sum(axis=1, keepdims=True).sqrt()
    if np.any(norm.data < 1e-12):
        raise FloatingPointError("zero-norm embedding before normalization")
    return h / norm


def embed_clip_frames(params, cfg: ModelConfig, frames: np.ndarray) -> np.ndarray:
    """Convenience: cubify one clip and return its embedding as an array."""
    from .tokenizer import cubify, standardize_cubes
    from .tensor import no_grad
    grid = cubify(frames)
    with no_grad():
        z = embed(params, cfg, standardize_cubes(grid.cubes)[None, :, :])
    return z.data[0]


# ---- checkpoint format -------------------------------------------------------

def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    """CKPT: magic, u32 count, then per tensor: u16 name len, name bytes,
    u32 rank, u32 dims, float32 little-endian data. Keys written sorted."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            data = np.ascontiguousarray(params[name].data, dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a CKPT checkpoint")
        (count,) = struct.unpack("<I", fh.read(4))
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
            out[name] = data.copy()
    return out


def params_from_arrays(arrays: dict[str, np.ndarray],
                       requires_grad=True) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in arrays.items()}
