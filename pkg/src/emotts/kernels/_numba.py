"""Compiled loop kernels.  Same signatures and results as ``_numpy``."""

import numba
import numpy as np

_jit = numba.njit(cache=True, nogil=True)


@_jit
def _phone_average(values, durations):
    n = durations.shape[0]
    out = np.zeros(n)
    pos = 0
    for i in range(n):
        d = durations[i]
        acc = 0.0
        for k in range(pos, pos + d):
            acc += values[k]
        if d > 0:
            out[i] = acc / d
        pos += d
    return out


def phone_average(values, durations):
    return _phone_average(
        np.ascontiguousarray(values, dtype=np.float64), np.ascontiguousarray(durations, dtype=np.int64)
    )


@_jit
def _expand2d(rows, durations):
    total = 0
    for d in durations:
        total += d
    width = rows.shape[1]
    out = np.empty((total, width), dtype=rows.dtype)
    pos = 0
    for i in range(rows.shape[0]):
        for _ in range(durations[i]):
            for c in range(width):
                out[pos, c] = rows[i, c]
            pos += 1
    return out


def expand(rows, durations):
    rows = np.asarray(rows)
    durations = np.ascontiguousarray(durations, dtype=np.int64)
    if rows.ndim == 1:
        return _expand2d(np.ascontiguousarray(rows[:, None]), durations)[:, 0]
    flat = np.ascontiguousarray(rows.reshape(rows.shape[0], -1))
    out = _expand2d(flat, durations)
    return out.reshape((out.shape[0],) + rows.shape[1:])


@_jit
def _overlap_add(frames, hop, window_sq):
    t, n = frames.shape
    length = n + hop * (t - 1)
    signal = np.zeros(length)
    norm = np.zeros(length)
    for i in range(t):
        off = i * hop
        for j in range(n):
            signal[off + j] += frames[i, j]
            norm[off + j] += window_sq[j]
    return signal, norm


def overlap_add(frames, hop, window_sq):
    return _overlap_add(
        np.ascontiguousarray(frames, dtype=np.float64), int(hop), np.ascontiguousarray(window_sq, dtype=np.float64)
    )


@_jit
def _box_smooth(x, h):
    t, d = x.shape
    w = 2 * h + 1
    out = np.empty((t, d))
    for c in range(d):
        acc = 0.0
        for k in range(-h, h + 1):
            acc += x[min(max(k, 0), t - 1), c]
        out[0, c] = acc / w
        for i in range(1, t):
            acc += x[min(i + h, t - 1), c] - x[max(i - h - 1, 0), c]
            out[i, c] = acc / w
    return out


def box_smooth(x, half_width):
    x = np.asarray(x, dtype=np.float64)
    if half_width <= 0:
        return x.copy()
    flat = np.ascontiguousarray(x.reshape(x.shape[0], -1))
    return _box_smooth(flat, int(half_width)).reshape(x.shape)


@_jit
def _edit_distance(a, b):
    m = b.shape[0]
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, a.shape[0] + 1):
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev, cur = cur, prev
    return prev[m]


def edit_distance(a, b):
    return int(
        _edit_distance(np.ascontiguousarray(a, dtype=np.int64), np.ascontiguousarray(b, dtype=np.int64))
    )
