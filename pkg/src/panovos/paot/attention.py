"""Single-head attention variants used by the E-LSTT blocks.

Queries, keys and values are token matrices ``(N, d)`` laid out row-major
over a ``(h, w)`` grid.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeError
from ..tensor import DTYPE, softmax_rows


def attention(q, k, v, return_weights: bool = False):
    """softmax(q k^T / sqrt(d)) v."""
    q, k, v = (np.asarray(a, dtype=DTYPE) for a in (q, k, v))
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} do not agree")
    scores = (q @ k.T) * DTYPE(1.0 / math.sqrt(q.shape[1]))
    w = softmax_rows(scores)
    out = w @ v
    return (out, w) if return_weights else out


def dilated_kv_length(size, r: int, n_frames: int = 1) -> int:
    h, w = size
    return n_frames * math.ceil(h / r) * math.ceil(w / r)


def dilate_tokens(x, size, r: int) -> np.ndarray:
    """Keep every ``r``-th row and column of each ``(h, w)`` frame stacked in ``x``."""
    h, w = size
    if r < 1 or r > h or r > w:
        raise ShapeError(f"dilation {r} does not fit a {h}x{w} grid")
    x = np.asarray(x)
    if x.shape[0] % (h * w):
        raise ShapeError(f"{x.shape[0]} tokens do not tile {h}x{w} frames")
    if r == 1:
        return x
    grid = x.reshape(-1, h, w, x.shape[1])
    return grid[:, ::r, ::r].reshape(-1, x.shape[1])


def dilated_long_term_attention(q, keys, values, r: int, size, return_weights: bool = False):
    """Attention of ``q`` against memory keys/values subsampled by ``r`` in both axes.

    ``keys``/``values`` stack one or more memory frames of grid ``size``.
    """
    k = dilate_tokens(keys, size, r)
    v = dilate_tokens(values, size, r)
    return attention(q, k, v, return_weights)


def _window_radius(window: int, size) -> int:
    if window < 1 or window % 2 == 0:
        raise ShapeError(f"window must be a positive odd number, got {window}")
    # anything wider than the grid sees the same candidates
    return min(window // 2, max(size) - 1)


def short_term_attention(q, keys, values, size, window: int, return_weights: bool = False):
    """Each query attends to the ``window x window`` neighbourhood around its own
    position in the previous frame; the window is clipped at the borders.

    With ``return_weights`` the weights come back as ``(N, window_eff**2)`` in
    row-major window order, zero at clipped positions.
    """
    h, w = size
    q, keys, values = (np.asarray(a, dtype=DTYPE) for a in (q, keys, values))
    if keys.shape[0] != h * w or q.shape[0] != h * w or values.shape[0] != h * w:
        raise ShapeError("short-term attention needs one previous frame aligned with the queries")
    rad = _window_radius(window, size)
    span = 2 * rad + 1
    d = q.shape[1]

    def windows(x):
        grid = np.pad(x.reshape(h, w, -1), ((rad, rad), (rad, rad), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(grid, (span, span), axis=(0, 1))
        # (h, w, c, span, span) -> (h*w, span*span, c)
        return win.transpose(0, 1, 3, 4, 2).reshape(h * w, span * span, -1)

    valid = windows(np.ones((h * w, 1), dtype=bool))[..., 0]
    kw, vw = windows(keys), windows(values)
    scores = np.einsum("nd,nkd->nk", q, kw) * DTYPE(1.0 / math.sqrt(d))
    scores = np.where(valid, scores, -np.inf).astype(DTYPE)
    weights = softmax_rows(scores)
    out = np.einsum("nk,nkd->nd", weights, vw).astype(DTYPE)
    return (out, weights) if return_weights else out
