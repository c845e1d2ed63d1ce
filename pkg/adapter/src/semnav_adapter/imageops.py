"""Numeric post-processing between backend outputs and wire payloads."""

from __future__ import annotations

import numpy as np


def bilinear_resize(field: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample a 2-D field to (out_h, out_w) with half-pixel alignment.

    Output samples sit at pixel centers of the target grid mapped onto the
    source grid; edges replicate. Output values stay within the input's
    range (convex interpolation).
    """
    m = np.asarray(field, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected 2-D field, got shape {m.shape}")
    in_h, in_w = m.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"degenerate output size {out_h}x{out_w}")
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = m[np.ix_(y0, x0)] * (1.0 - wx) + m[np.ix_(y0, x1)] * wx
    bot = m[np.ix_(y1, x0)] * (1.0 - wx) + m[np.ix_(y1, x1)] * wx
    return top * (1.0 - wy) + bot * wy


def softmax_stack(logits: np.ndarray) -> np.ndarray:
    """Channel-wise softmax of a (K, H, W) stack; per-pixel sums are 1."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"expected (K, H, W) logits, got shape {z.shape}")
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)
