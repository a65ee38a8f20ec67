"""Small dense-array kernel for the PAOT forward pass.

Everything is float32 numpy. Layouts: matrices are ``(rows, cols)``, feature
maps are ``(C, H, W)``, conv weights are ``(C_out, C_in, k, k)``.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError

DTYPE = np.float32


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def matmul(a, b) -> np.ndarray:
    a, b = _f32(a), _f32(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(a) -> np.ndarray:
    """Row-wise softmax. ``-inf`` entries get weight 0; each row needs one finite entry."""
    a = _f32(a)
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def conv2d(x, w, stride: int = 1, padding: int | None = None) -> np.ndarray:
    """Cross-correlation of ``x`` (C, H, W) with ``w`` (C', C, k, k), zero padded."""
    x, w = _f32(x), _f32(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects (C,H,W) and (C',C,k,k), got {x.shape}, {w.shape}")
    c_out, c_in, kh, kw = w.shape
    if c_in != x.shape[0]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[0]}, kernel {c_in}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    if padding is None:
        padding = kh // 2
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    _, h, wd = x.shape
    span_h, span_w = h + 2 * padding - kh, wd + 2 * padding - kw
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise ShapeError(
            f"conv2d output size is not integral for input {h}x{wd}, k={kh}, "
            f"stride={stride}, padding={padding}"
        )
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (C, H', W', k, k)
    out = np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))
    return np.ascontiguousarray(out, dtype=DTYPE)


def upsample2x(x) -> np.ndarray:
    """Bilinear 2x upsampling, sample ``o`` reads source coordinate ``o / 2``.

    Even outputs copy the source exactly, odd outputs average the two
    neighbours, and the final odd row/column repeats the edge.
    """
    x = _f32(x)

    def along(a, axis):
        nxt = np.concatenate([np.take(a, range(1, a.shape[axis]), axis=axis),
                              np.take(a, [a.shape[axis] - 1], axis=axis)], axis=axis)
        mid = (a + nxt) * DTYPE(0.5)
        out = np.stack([a, mid], axis=axis + 1)
        shape = list(a.shape)
        shape[axis] *= 2
        return out.reshape(shape)

    return along(along(x, x.ndim - 2), x.ndim - 1)


def downsample(x, r: int) -> np.ndarray:
    """Keep every ``r``-th row and column of the last two axes, starting at 0."""
    x = np.asarray(x)
    if r < 1:
        raise ShapeError("downsample factor must be >= 1")
    if x.shape[-2] < r or x.shape[-1] < r:
        raise ShapeError(f"cannot downsample {x.shape[-2:]} by {r}")
    return x[..., ::r, ::r]


def layer_norm(x, eps: float = 1e-5) -> np.ndarray:
    """Normalise the last axis to zero mean and unit variance (no affine)."""
    x = _f32(x)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + DTYPE(eps))


def relu(x) -> np.ndarray:
    return np.maximum(_f32(x), DTYPE(0))


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


def to_tokens(x) -> np.ndarray:
    """(C, H, W) -> (H*W, C)."""
    c = x.shape[0]
    return np.ascontiguousarray(x.reshape(c, -1).T)


def from_tokens(t, size) -> np.ndarray:
    """(H*W, C) -> (C, H, W)."""
    h, w = size
    return np.ascontiguousarray(t.T.reshape(-1, h, w))
