import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uma_stream import frontend as fe
from uma_stream.weights import ModelConfig, init_random


def params(seed=0, channels=4, D=16, zero_bias=False):
    cfg = ModelConfig(model_dim=D, state_size=2, num_encoder_blocks=1, num_decoder_blocks=1,
                      decoder_heads=2, decoder_ff_dim=8, vocab_size=4,
                      subsample_channels=channels, max_decoder_len=1)
    p = fe.SubsampleParams.from_bundle(init_random(cfg, seed))
    if zero_bias:
        p.conv1_b[:] = 0
        p.conv2_b[:] = 0
        p.proj_b[:] = 0
    return p


def stream(features, p):
    s = fe.SubsampleState(p, features.shape[1])
    return [y for f in features if (y := s.step(f)) is not None]


def test_silence_hits_log_floor():
    out = fe.fbank(fe.AudioBuffer(np.zeros(16000)))
    assert out.shape == (122, 80)
    assert np.all(out == np.float32(math.log(1e-10)))


@pytest.mark.parametrize("n", [0, 511, 512, 513, 640, 16000, 16001, 48000])
def test_frame_count(n):
    # count window starts that fit, one by one
    expected = sum(1 for start in range(0, n, 128) if start + 512 <= n)
    assert fe.num_frames(n) == expected
    assert fe.fbank(np.zeros(n, np.float32)).shape == (expected, 80)


def test_sine_peak_bin_is_constant():
    t = np.arange(16000) / 16000
    out = fe.fbank(fe.AudioBuffer(0.5 * np.sin(2 * np.pi * 1000 * t)))
    peaks = np.argmax(out, axis=1)
    assert np.all(peaks == peaks[0])
    centers = fe.mel_to_hz(np.linspace(0, fe.hz_to_mel(8000), 82))[1:-1]
    assert abs(centers[peaks[0]] - 1000) < 100


def test_matches_direct_dft_at_one_frame():
    rng = np.random.default_rng(4)
    x = rng.uniform(-0.5, 0.5, 2000).astype(np.float32)
    frame = 3
    seg = x[128 * frame: 128 * frame + 512].astype(np.float64)
    n = np.arange(512)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * n / 512)
    power = np.array([abs(np.sum(seg * win * np.exp(-2j * np.pi * k * n / 512))) ** 2
                      for k in range(257)])
    want = np.log(fe.mel_filterbank() @ power + 1e-10)
    got = fe.fbank(x)[frame]
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)


def test_mel_filterbank_shape_and_peaks():
    fb = fe.mel_filterbank()
    assert fb.shape == (80, 257)
    assert np.all(fb >= 0) and np.all(fb.max(axis=1) <= 1.0)
    assert np.all(fb.sum(axis=1) > 0)


def test_fbank_stream_matches_batch():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(5000).astype(np.float32) * 0.1
    s = fe.FbankStream()
    got, pos = [], 0
    for size in rng.integers(1, 700, 40):
        got.append(s.push(x[pos: pos + size]))
        pos += size
        if pos >= len(x):
            break
    np.testing.assert_array_equal(np.concatenate(got), fe.fbank(x[:pos]))


def test_audio_validation():
    with pytest.raises(ValueError):
        fe.AudioBuffer(np.zeros(10), sample_rate=8000)
    with pytest.raises(ValueError):
        fe.AudioBuffer(np.array([0.0, np.nan]))


def test_wav_roundtrip(tmp_path):
    x = np.round(np.linspace(-0.5, 0.5, 1000) * 32768) / 32768
    fe.write_wav(tmp_path / "a.wav", fe.AudioBuffer(x))
    back = fe.read_wav(tmp_path / "a.wav")
    np.testing.assert_allclose(back.samples, x, atol=1e-6)


def test_eight_frames_give_two():
    p = params()
    x = np.random.default_rng(0).standard_normal((8, 80))
    assert len(stream(x, p)) == 2
    assert fe.subsample_offline(x, p).shape == (2, 16)


def test_zero_input_zero_output():
    p = params(zero_bias=True)
    out = fe.subsample_offline(np.zeros((40, 80)), p)
    assert np.all(out == 0)


def test_stream_equals_offline_100_frames():
    p = params(seed=5)
    x = np.random.default_rng(5).standard_normal((100, 80))
    np.testing.assert_array_equal(np.stack(stream(x, p)), fe.subsample_offline(x, p))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 60), st.integers(0, 1000), st.sampled_from([1, 3, 8]))
def test_stream_equals_offline_property(T, seed, channels):
    p = params(seed=seed, channels=channels)
    x = np.random.default_rng(seed).standard_normal((T, 80))
    got = stream(x, p)
    want = fe.subsample_offline(x, p)
    assert len(got) == T // 4 == want.shape[0]
    if got:
        np.testing.assert_array_equal(np.stack(got), want)


def test_output_ready_at_frame_4m_plus_3_and_causal():
    p = params(seed=1)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((24, 80))
    s = fe.SubsampleState(p, 80)
    ready = [t for t, f in enumerate(x) if s.step(f) is not None]
    assert ready == [4 * m + 3 for m in range(6)]
    base = fe.subsample_offline(x, p)
    y = x.copy()
    y[12:] += rng.standard_normal((12, 80))
    pert = fe.subsample_offline(y, p)
    # output m only sees input frames up to 4m+3
    np.testing.assert_array_equal(pert[:3], base[:3])
    assert not np.array_equal(pert[3], base[3])


def test_projection_width_validated():
    p = params()
    with pytest.raises(ValueError):
        fe.SubsampleState(p, 40)


def test_frame_width_validated():
    s = fe.SubsampleState(params(), 80)
    with pytest.raises(ValueError):
        s.step(np.zeros(79))
