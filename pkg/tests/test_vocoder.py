import numpy as np
import pytest
from hypothesis import given, strategies as st

from simulstream.errors import NumericError
from simulstream.vocoder import (HOP, VocoderState, transposed_conv_offline, transposed_conv_step,
                                 vocode_chunk, vocode_offline, vocode_step)


def mel_frames(rng, n):
    return rng.standard_normal((n, 128)).astype(np.float32)


def transposed_conv_oracle(x, w, b, factor):
    """Definition: y[t*s + j] += x[t] @ w[j], truncated to T*s outputs."""
    x, w = x.astype(np.float64), w.astype(np.float64)
    T = x.shape[0]
    y = np.tile(b.astype(np.float64), (T * factor, 1))
    for t in range(T):
        for j in range(w.shape[0]):
            n = t * factor + j
            if n < T * factor:
                y[n] += x[t] @ w[j]
    return y


def test_hop_is_600():
    assert HOP == 600


@pytest.mark.parametrize("factor", [4, 5, 6])
def test_transposed_conv_paths_match_definition(rng, factor):
    x = rng.standard_normal((7, 12)).astype(np.float32)
    w = rng.standard_normal((2 * factor, 12, 9)).astype(np.float32)
    b = rng.standard_normal(9).astype(np.float32)
    oracle = transposed_conv_oracle(x, w, b, factor)
    np.testing.assert_allclose(transposed_conv_offline(x, w, b, factor), oracle, atol=1e-4)
    y, prev = transposed_conv_step(x, np.zeros((1, 12), np.float32), w, b, factor)
    np.testing.assert_allclose(y, oracle, atol=1e-4)
    np.testing.assert_array_equal(prev, x[-1:])
    # one row at a time with the carried input row
    rows, prev = [], np.zeros((1, 12), np.float32)
    for t in range(7):
        out, prev = transposed_conv_step(x[t:t + 1], prev, w, b, factor)
        rows.append(out)
    np.testing.assert_allclose(np.concatenate(rows), oracle, atol=1e-4)


def test_frame_yields_600_bounded_samples(desk_weights, rng):
    state = VocoderState.create()
    for frame in mel_frames(rng, 3) * 10:
        y = vocode_step(state, frame, desk_weights)
        assert y.shape == (600,) and y.dtype == np.float32
        assert np.all(np.abs(y) <= 1.0)
    assert state.samples_emitted == 1800


def test_zero_weights_are_silent(desk_weights, rng):
    w = desk_weights.copy()
    for name in w.tensors:
        if name.startswith("voc/"):
            w.tensors[name] = np.zeros_like(w.tensors[name])
    y = vocode_step(VocoderState.create(), mel_frames(rng, 1)[0], w)
    np.testing.assert_array_equal(y, np.zeros(600, np.float32))


def test_streaming_matches_offline(desk_weights, rng):
    mels = mel_frames(rng, 10)
    state = VocoderState.create()
    streamed = np.concatenate([vocode_step(state, m, desk_weights) for m in mels])
    offline = vocode_offline(mels, desk_weights)
    assert streamed.shape == offline.shape == (6000,)
    assert np.max(np.abs(streamed - offline)) <= 1e-5


def test_single_frame_paths_identical(desk_weights, rng):
    m = mel_frames(rng, 1)
    np.testing.assert_array_equal(vocode_offline(m, desk_weights),
                                  vocode_step(VocoderState.create(), m[0], desk_weights))


def test_empty_input(desk_weights):
    assert vocode_offline(np.zeros((0, 128), np.float32), desk_weights).size == 0


def test_non_finite_rejected(desk_weights):
    bad = np.zeros(128, np.float32)
    bad[3] = np.inf
    with pytest.raises(NumericError):
        vocode_step(VocoderState.create(), bad, desk_weights)
    with pytest.raises(NumericError):
        vocode_offline(bad[None], desk_weights)


def test_samples_ignore_later_frames(desk_weights, rng):
    a = mel_frames(rng, 8)
    b = a.copy()
    j = 5
    b[j:] = mel_frames(rng, 3)
    np.testing.assert_array_equal(vocode_offline(a, desk_weights)[:j * 600],
                                  vocode_offline(b, desk_weights)[:j * 600])


@given(seed=st.integers(0, 2**31), sizes=st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_chunked_streaming_matches_offline(desk_weights, seed, sizes):
    mels = mel_frames(np.random.default_rng(seed), sum(sizes))
    state = VocoderState.create()
    parts, start = [], 0
    for n in sizes:
        parts.append(vocode_chunk(state, mels[start:start + n], desk_weights))
        start += n
    streamed = np.concatenate(parts)
    assert streamed.size == 600 * len(mels)
    assert np.max(np.abs(streamed - vocode_offline(mels, desk_weights))) <= 1e-5
