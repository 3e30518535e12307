"""Log-mel filterbank features and the causal stride-4 convolutional subsampler."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
WIN_LENGTH = 512  # 32 ms
HOP_LENGTH = 128  # 8 ms
N_FFT = 512
N_MELS = 80
LOG_FLOOR = 1e-10


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {self.sample_rate} Hz")
        if not np.isfinite(self.samples).all():
            raise ValueError("audio contains non-finite samples")


@dataclass
class FeatureFrame:
    values: np.ndarray
    frame_index: int
    frame_shift_ms: int = 8


def read_wav(path: str | Path) -> AudioBuffer:
    """Read mono 16-bit PCM WAV into [-1, 1) floats."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
        rate = w.getframerate()
        pcm = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return AudioBuffer(pcm.astype(np.float32) / 32768.0, rate)


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(pcm.tobytes())


def read_f32(path: str | Path) -> AudioBuffer:
    return AudioBuffer(np.fromfile(str(path), dtype="<f4"))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float = 8000.0) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape ``(n_mels, n_fft // 2 + 1)``."""
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lower) / (center - lower)
    falling = (upper - bin_hz) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


_MEL = mel_filterbank()
# periodic Hann
_WINDOW = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WIN_LENGTH) / WIN_LENGTH)


def num_frames(num_samples: int) -> int:
    if num_samples < WIN_LENGTH:
        return 0
    return (num_samples - WIN_LENGTH) // HOP_LENGTH + 1


def _frames_to_fbank(frames: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(frames * _WINDOW, n=N_FFT, axis=-1)
    power = spec.real ** 2 + spec.imag ** 2
    return np.log(power @ _MEL.T + LOG_FLOOR).astype(np.float32)


def fbank(audio: AudioBuffer | np.ndarray) -> np.ndarray:
    """80-dim log-mel features, one row per 8 ms; frame t covers samples [128t, 128t+512)."""
    samples = audio.samples if isinstance(audio, AudioBuffer) else np.asarray(audio, np.float32)
    n = num_frames(len(samples))
    if n == 0:
        return np.zeros((0, N_MELS), dtype=np.float32)
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(n)[:, None]
    return _frames_to_fbank(samples[idx].astype(np.float64))


class FbankStream:
    """Incremental :func:`fbank`: feed arbitrary sample chunks, get completed frames."""

    def __init__(self):
        self._pending = np.zeros(0, dtype=np.float32)

    def push(self, samples) -> np.ndarray:
        self._pending = np.concatenate([self._pending, np.asarray(samples, np.float32).reshape(-1)])
        n = num_frames(len(self._pending))
        if n == 0:
            return np.zeros((0, N_MELS), dtype=np.float32)
        out = fbank(self._pending[: (n - 1) * HOP_LENGTH + WIN_LENGTH])
        self._pending = self._pending[n * HOP_LENGTH:]
        return out


# --- causal subsampling ---------------------------------------------------------


@dataclass
class SubsampleParams:
    conv1_w: np.ndarray  # (C1, 1, 3, 3) over (time, freq)
    conv1_b: np.ndarray
    conv2_w: np.ndarray  # (C2, C1, 3, 3)
    conv2_b: np.ndarray
    proj_w: np.ndarray  # (D, C2 * F2)
    proj_b: np.ndarray

    @classmethod
    def from_bundle(cls, bundle) -> "SubsampleParams":
        g = lambda n: np.asarray(bundle[n], dtype=np.float64)  # noqa: E731
        return cls(g("fe.conv1.w"), g("fe.conv1.b"), g("fe.conv2.w"), g("fe.conv2.b"),
                   g("fe.proj.w"), g("fe.proj.b"))


def _out_len(f: int) -> int:
    return (f - 3) // 2 + 1


def conv1_frame(window: np.ndarray, p: SubsampleParams) -> np.ndarray:
    """First conv at one output time step; ``window`` is ``(3, F)`` input frames t-2..t."""
    f_out = _out_len(window.shape[1])
    acc = np.broadcast_to(p.conv1_b[:, None], (p.conv1_w.shape[0], f_out)).copy()
    for dt in range(3):
        for df in range(3):
            acc += p.conv1_w[:, 0, dt, df][:, None] * window[dt, df: df + 2 * f_out - 1: 2][None, :]
    return np.maximum(acc, 0.0)


def conv2_frame(window: np.ndarray, p: SubsampleParams) -> np.ndarray:
    """Second conv at one output step; ``window`` is ``(3, C1, F1)``."""
    f_out = _out_len(window.shape[2])
    acc = np.broadcast_to(p.conv2_b[:, None], (p.conv2_w.shape[0], f_out)).copy()
    for dt in range(3):
        for df in range(3):
            acc += p.conv2_w[:, :, dt, df] @ window[dt, :, df: df + 2 * f_out - 1: 2]
    return np.maximum(acc, 0.0)


def project(y2: np.ndarray, p: SubsampleParams) -> np.ndarray:
    return p.proj_w @ y2.reshape(-1) + p.proj_b


class SubsampleState:
    """Streaming state of the two causal stride-2 convolutions.

    Layer 1 fires on odd input frames (covering frames t-2..t), layer 2 on odd
    layer-1 frames, so one D-vector comes out per four input frames, the m-th
    as soon as input frame 4m+3 has arrived.
    """

    def __init__(self, params: SubsampleParams, feat_dim: int):
        self.params = params
        self.feat_dim = feat_dim
        c1 = params.conv1_w.shape[0]
        f1 = _out_len(feat_dim)
        expected = params.conv2_w.shape[0] * _out_len(f1)
        if params.proj_w.shape[1] != expected:
            raise ValueError(
                f"subsampler projection expects {params.proj_w.shape[1]} inputs, "
                f"feat_dim {feat_dim} gives {expected}"
            )
        self._in = np.zeros((3, feat_dim))
        self._mid = np.zeros((3, c1, f1))
        self.frames_in = 0
        self.frames_mid = 0
        self.frames_out = 0

    def step(self, frame) -> np.ndarray | None:
        x = np.asarray(getattr(frame, "values", frame), dtype=np.float64)
        if x.shape != (self.feat_dim,):
            raise ValueError(f"feature frame has shape {x.shape}, expected ({self.feat_dim},)")
        self._in = np.roll(self._in, -1, axis=0)
        self._in[2] = x
        self.frames_in += 1
        if self.frames_in % 2:
            return None
        y1 = conv1_frame(self._in, self.params)
        self._mid = np.roll(self._mid, -1, axis=0)
        self._mid[2] = y1
        self.frames_mid += 1
        if self.frames_mid % 2:
            return None
        self.frames_out += 1
        return project(conv2_frame(self._mid, self.params), self.params)


def subsample_offline(features: np.ndarray, params: SubsampleParams) -> np.ndarray:
    """Whole-sequence subsampling; row m equals the m-th streaming output bit for bit."""
    x = np.asarray(features, dtype=np.float64)
    T, F = x.shape
    padded = np.concatenate([np.zeros((1, F)), x])
    n1 = T // 2
    mid = [conv1_frame(padded[2 * j: 2 * j + 3], params) for j in range(n1)]
    if not mid:
        return np.zeros((0, params.proj_w.shape[0]))
    mid = np.concatenate([np.zeros((1,) + mid[0].shape), np.stack(mid)])
    out = [project(conv2_frame(mid[2 * m: 2 * m + 3], params), params) for m in range(n1 // 2)]
    if not out:
        return np.zeros((0, params.proj_w.shape[0]))
    return np.stack(out)
