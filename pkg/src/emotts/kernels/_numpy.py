"""Vectorised numpy kernels (reference path, no compilation)."""

import numpy as np


def phone_average(values, durations):
    values = np.asarray(values, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.int64)
    n = durations.shape[0]
    seg = np.repeat(np.arange(n), durations)
    sums = np.bincount(seg, weights=values, minlength=n)
    out = np.zeros(n, dtype=np.float64)
    nz = durations > 0
    out[nz] = sums[nz] / durations[nz]
    return out


def expand(rows, durations):
    return np.repeat(np.asarray(rows), np.asarray(durations, dtype=np.int64), axis=0)


def overlap_add(frames, hop, window_sq):
    """Overlap-add ``frames`` [T, n] at stride ``hop``.

    Returns the summed signal and the summed squared window, both of length
    ``n + hop * (T - 1)``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    t, n = frames.shape
    length = n + hop * (t - 1)
    idx = (np.arange(t)[:, None] * hop + np.arange(n)[None, :]).ravel()
    signal = np.bincount(idx, weights=frames.ravel(), minlength=length)
    norm = np.bincount(idx, weights=np.broadcast_to(window_sq, (t, n)).ravel(), minlength=length)
    return signal, norm


def box_smooth(x, half_width):
    """Centred moving average along axis 0, edges clamped to the end rows."""
    x = np.asarray(x, dtype=np.float64)
    if half_width <= 0:
        return x.copy()
    t = x.shape[0]
    padded = np.concatenate(
        [np.repeat(x[:1], half_width, axis=0), x, np.repeat(x[-1:], half_width, axis=0)], axis=0
    )
    csum = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(padded, axis=0)], axis=0)
    w = 2 * half_width + 1
    return (csum[w : w + t] - csum[:t]) / w


def edit_distance(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    m = b.shape[0]
    cols = np.arange(m + 1)
    prev = cols.astype(np.int64)
    for i in range(1, a.shape[0] + 1):
        cur = np.empty(m + 1, dtype=np.int64)
        cur[0] = i
        sub = prev[:-1] + (b != a[i - 1])
        cur[1:] = np.minimum(prev[1:] + 1, sub)
        # insertion chain: cur[j] = min_k<=j cur[k] + (j - k)
        cur = np.minimum.accumulate(cur - cols) + cols
        prev = cur
    return int(prev[m])
