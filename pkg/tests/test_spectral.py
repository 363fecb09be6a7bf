import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from riesz_she import spectral as S

finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(arrays(np.float64, st.sampled_from([(8,), (3, 16), (2, 2, 32)]), elements=finite))
@settings(max_examples=40, deadline=None)
def test_forward_matches_numpy(x):
    got = S.RealFFT(x.shape).forward(x)
    np.testing.assert_allclose(got, np.fft.rfft(x, axis=-1), rtol=1e-12, atol=1e-9 * (1 + np.abs(x).max()))


@given(arrays(np.float64, (4, 64), elements=finite))
@settings(max_examples=40, deadline=None)
def test_round_trip(x):
    back = S.irfft(S.rfft(x), 64)
    np.testing.assert_allclose(back, x, atol=1e-12 * (1 + np.abs(x).max()))


def test_filter_by_one_is_identity():
    x = np.random.default_rng(0).standard_normal((5, 128))
    np.testing.assert_allclose(S.RealFFT(x.shape).filter(x), x, atol=1e-14)


def test_filter_shift_symbol():
    n = 64
    x = np.random.default_rng(1).standard_normal(n)
    k = np.arange(n // 2 + 1)
    shift = np.exp(-2j * np.pi * k * 3 / n)
    np.testing.assert_allclose(S.RealFFT((n,)).filter(x, shift), np.roll(x, 3), atol=1e-13)


def test_separate_output_keeps_input():
    f = S.RealFFT((2, 16), separate_output=True)
    x = np.arange(32.0).reshape(2, 16)
    f.input[...] = x
    f.filter(symbol=0.5)
    np.testing.assert_array_equal(f.input, x)
    np.testing.assert_allclose(f.output, 0.5 * x, atol=1e-13)


def test_shared_buffers_by_default():
    f = S.RealFFT((16,))
    assert f.output is f.input


def test_module_helpers_return_copies():
    x = np.ones(8)
    c = S.rfft(x)
    c[0] = 0
    assert S.rfft(x)[0] == pytest.approx(8.0)


def test_deterministic_across_instances():
    x = np.random.default_rng(2).standard_normal((3, 256))
    a = S.RealFFT(x.shape).filter(x, 0.3).copy()
    b = S.RealFFT(x.shape).filter(x, 0.3).copy()
    assert a.tobytes() == b.tobytes()


@given(st.integers(3, 13), st.integers(1, 6), st.integers(0, 5))
@settings(max_examples=30, deadline=None)
def test_rows_independent_of_batch(k, rows, pick):
    n = 2**k
    x = np.random.default_rng(k).standard_normal((6, n))
    full = S.RealFFT(x.shape).filter(x, 0.7).copy()
    i = min(pick, rows - 1)
    part = S.RealFFT((rows, n)).filter(x[:rows], 0.7)
    one = S.RealFFT((n,)).filter(x[i], 0.7)
    assert part[i].tobytes() == full[i].tobytes() == one.tobytes()
