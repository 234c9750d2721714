import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emotts import kernels

BACKENDS = kernels.available()
needs_both = pytest.mark.skipif(len(BACKENDS) < 2, reason="numba backend unavailable")

durations = st.lists(st.integers(0, 6), min_size=1, max_size=30)


def ref_phone_average(values, durs):
    out, pos = [], 0
    for d in durs:
        out.append(float(np.mean(values[pos : pos + d])) if d else 0.0)
        pos += d
    return np.array(out)


def ref_edit_distance(a, b):
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[-1][-1]


@pytest.mark.parametrize("name", BACKENDS)
@settings(max_examples=40, deadline=None)
@given(durs=durations)
def test_phone_average_matches_loop(name, durs):
    k = kernels.backend(name)
    durs = np.array(durs, dtype=np.int64)
    vals = np.random.default_rng(len(durs)).normal(size=int(durs.sum()))
    np.testing.assert_allclose(k.phone_average(vals, durs), ref_phone_average(vals, durs), atol=1e-12)


@pytest.mark.parametrize("name", BACKENDS)
@settings(max_examples=40, deadline=None)
@given(a=st.lists(st.integers(0, 3), max_size=12), b=st.lists(st.integers(0, 3), max_size=12))
def test_edit_distance_matches_dp(name, a, b):
    k = kernels.backend(name)
    assert k.edit_distance(np.array(a, dtype=np.int64), np.array(b, dtype=np.int64)) == ref_edit_distance(a, b)


@pytest.mark.parametrize("name", BACKENDS)
def test_box_smooth_zero_width_is_identity(name):
    x = np.random.default_rng(1).normal(size=(17, 4))
    np.testing.assert_allclose(kernels.backend(name).box_smooth(x, 0), x, atol=1e-12)


@pytest.mark.parametrize("name", BACKENDS)
def test_box_smooth_constant_is_fixed_point(name):
    x = np.full((20, 3), 2.5)
    np.testing.assert_allclose(kernels.backend(name).box_smooth(x, 4), x, atol=1e-12)


@pytest.mark.parametrize("name", BACKENDS)
def test_expand_repeats_rows(name):
    x = np.arange(6.0).reshape(3, 2)
    out = kernels.backend(name).expand(x, np.array([2, 0, 1]))
    np.testing.assert_array_equal(out, np.array([[0, 1], [0, 1], [4, 5.0]]))


@pytest.mark.parametrize("name", BACKENDS)
def test_overlap_add_sums_shifted_frames(name):
    frames = np.ones((3, 4))
    sig, norm = kernels.backend(name).overlap_add(frames, 2, np.ones(4))
    np.testing.assert_array_equal(sig, [1, 1, 2, 2, 2, 2, 1, 1])
    np.testing.assert_array_equal(norm, sig)


@needs_both
def test_backends_agree_on_box_smooth():
    x = np.random.default_rng(3).normal(size=(50, 8))
    for w in (1, 3, 11, 60):
        np.testing.assert_allclose(kernels.backend("numba").box_smooth(x, w), kernels.backend("numpy").box_smooth(x, w), atol=1e-10)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.backend("fortran")


def test_env_flag_selects_numpy(monkeypatch):
    import importlib

    monkeypatch.setenv("EMOTTS_NUMBA", "0")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "numpy"
    finally:
        monkeypatch.delenv("EMOTTS_NUMBA")
        importlib.reload(kernels)
