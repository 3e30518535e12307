"""Convolutional lookahead: non-causal conv over time, Swish, LayerNorm.

A kernel of odd width k centred on frame t sees frames t-(k-1)/2 .. t+(k-1)/2,
so streaming output for frame t is available once frame t+(k-1)/2 arrives.
Both stream edges are zero padded, giving one output per input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-5


class LookaheadFinalizedError(RuntimeError):
    pass


@dataclass
class LookaheadParams:
    conv_w: np.ndarray  # (D, k) depthwise or (D, D, k) full mixing
    conv_b: np.ndarray
    norm_g: np.ndarray
    norm_b: np.ndarray

    @classmethod
    def from_bundle(cls, bundle) -> "LookaheadParams":
        g = lambda n: np.asarray(bundle[n], dtype=np.float64)  # noqa: E731
        return cls(g("la.conv.w"), g("la.conv.b"), g("la.norm.g"), g("la.norm.b"))

    @property
    def kernel(self) -> int:
        return self.conv_w.shape[-1]

    @property
    def delay(self) -> int:
        return (self.kernel - 1) // 2

    @property
    def depthwise(self) -> bool:
        return self.conv_w.ndim == 2


def layer_norm(x, g, b, eps=LN_EPS):
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def swish(x):
    return x / (1.0 + np.exp(-x))


def _tap(w_j, x, depthwise: bool):
    # w_j: (D,) or (D, D); x: (D,) or (T, D)
    if depthwise:
        return w_j * x
    # elementwise product and sum instead of BLAS, whose rounding depends on
    # batch shape and memory alignment
    if x.ndim == 1:
        return np.sum(w_j * x, axis=1)
    return np.stack([np.sum(w_j * row, axis=1) for row in x])


def _finish(conv, p: LookaheadParams):
    return layer_norm(swish(conv), p.norm_g, p.norm_b)


class LookaheadBuffer:
    """Ring buffer of the last k encoder outputs (zero-filled at stream start)."""

    def __init__(self, params: LookaheadParams, dim: int):
        self.params = params
        self.dim = dim
        self.k = params.kernel
        self._ring = np.zeros((self.k, dim))
        self._head = 0  # slot that receives the next push
        self.pushed = 0
        self.emitted = 0
        self.finalized = False

    def _window_output(self) -> np.ndarray:
        p = self.params
        acc = np.broadcast_to(p.conv_b, (self.dim,)).copy()
        for j in range(self.k):
            # oldest slot first
            acc += _tap(p.conv_w[..., j], self._ring[(self._head + j) % self.k], p.depthwise)
        self.emitted += 1
        return _finish(acc, p)

    def _push(self, e) -> None:
        self._ring[self._head] = e
        self._head = (self._head + 1) % self.k

    def step(self, e_t) -> list[np.ndarray]:
        if self.finalized:
            raise LookaheadFinalizedError("push after finalize")
        e_t = np.asarray(e_t, dtype=np.float64)
        if e_t.shape != (self.dim,):
            raise ValueError(f"lookahead input has shape {e_t.shape}, expected ({self.dim},)")
        self._push(e_t)
        self.pushed += 1
        if self.pushed > self.params.delay:
            return [self._window_output()]
        return []

    def finalize(self) -> list[np.ndarray]:
        if self.finalized:
            raise LookaheadFinalizedError("lookahead finalized twice")
        self.finalized = True
        out = []
        zero = np.zeros(self.dim)
        filled = self.pushed
        while self.emitted < self.pushed:
            # output j needs frames up to j + delay in the ring
            while filled < self.emitted + self.params.delay + 1:
                self._push(zero)
                filled += 1
            out.append(self._window_output())
        return out


def lookahead_forward(e_seq, p: LookaheadParams) -> np.ndarray:
    """Offline same-padded convolution; equals streaming steps + finalize bit for bit."""
    e_seq = np.asarray(e_seq, dtype=np.float64)
    T, D = e_seq.shape
    if T == 0:
        return np.zeros((0, D))
    d = p.delay
    padded = np.concatenate([np.zeros((p.kernel - 1 - d, D)), e_seq, np.zeros((d, D))])
    acc = np.broadcast_to(p.conv_b, (T, D)).copy()
    for j in range(p.kernel):
        acc += _tap(p.conv_w[..., j], padded[j: j + T], p.depthwise)
    return _finish(acc, p)


def kernel_for_lookahead_ms(ms: int, frame_shift_ms: int = 32) -> int:
    if ms < 0 or ms % frame_shift_ms:
        raise ValueError(f"lookahead {ms} ms is not a non-negative multiple of {frame_shift_ms} ms")
    return 2 * (ms // frame_shift_ms) + 1
