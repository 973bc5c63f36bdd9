"""Adam optimizer (decoupled weight decay) and a finite-difference checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState) -> AdamState:
    """One Adam step, in-place on ``params``.

    Weight decay is decoupled: theta <- theta - lr*wd*theta is applied
    before the moment update. Bias-corrected first/second moments.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for '{name}'")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if state.weight_decay:
            p.data -= state.lr * state.weight_decay * p.data
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
            state.first_moment[name] = m
            state.second_moment[name] = v
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        p.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return state


def gradient_check(loss_fn, params: dict[str, Tensor], h_scale: float = 1e-5,
                   max_coords_per_param: int = 20, rng=None) -> float:
    """Compare analytic gradients of ``loss_fn(params)`` to central differences.

    ``loss_fn`` must be deterministic and scalar-valued; params should be
    float64 for meaningful tolerances. Returns the max relative error
    |analytic - numeric| / max(1e-12, |analytic| + |numeric|) over sampled
    coordinates.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params.values():
        p.zero_grad()
        p.requires_grad = True
    loss = loss_fn(params)
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        coords = (np.arange(n) if n <= max_coords_per_param
                  else rng.choice(n, size=max_coords_per_param, replace=False))
        for i in coords:
            orig = flat[i]
            h = h_scale * max(1.0, abs(orig))
            flat[i] = orig + h
            lp = loss_fn(params).item()
            flat[i] = orig - h
            lm = loss_fn(params).item()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
