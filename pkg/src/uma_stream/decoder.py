"""Causal self-attention decoder over the aggregated token-level sequence.

Pre-norm blocks (gain-only LayerNorm, multi-head causal attention, ReLU
feed-forward), a final LayerNorm and a linear head to the vocabulary
(index 0 = blank).  A sinusoidal position table is added at entry.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-5
_stream_ids = itertools.count()


class DecoderStateError(RuntimeError):
    pass


def layer_norm(x, g, eps=LN_EPS):
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / np.sum(ez, axis=axis, keepdims=True)


@dataclass
class DecoderLayer:
    norm1: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    norm2: np.ndarray
    w1: np.ndarray  # (F, D)
    w2: np.ndarray  # (D, F)


@dataclass
class DecoderParams:
    layers: list[DecoderLayer]
    norm_g: np.ndarray
    out_w: np.ndarray  # (V, D)
    out_b: np.ndarray
    posenc: np.ndarray  # (max_len, D)
    heads: int

    @classmethod
    def from_bundle(cls, bundle, num_layers: int, heads: int) -> "DecoderParams":
        g = lambda n: np.asarray(bundle[n], dtype=np.float64)  # noqa: E731
        layers = []
        for i in range(num_layers):
            p = f"dec.{i}."
            layers.append(DecoderLayer(
                g(p + "norm1.g"), g(p + "attn.q.w"), g(p + "attn.k.w"), g(p + "attn.v.w"),
                g(p + "attn.o.w"), g(p + "norm2.g"), g(p + "ff.w1"), g(p + "ff.w2"),
            ))
        return cls(layers, g("dec.norm.g"), g("dec.out.w"), g("dec.out.b"), g("dec.posenc"), heads)

    @property
    def dim(self) -> int:
        return self.out_w.shape[1]


class DecoderState:
    """Per-stream key/value cache with geometric growth.

    Rows at or beyond ``committed_len`` are scratch, so a snapshot only needs
    the length: restoring truncates and the next step overwrites.
    """

    def __init__(self, params: DecoderParams, capacity: int = 32):
        self.stream_id = next(_stream_ids)
        L, D = len(params.layers), params.dim
        self._keys = np.zeros((L, capacity, D))
        self._values = np.zeros((L, capacity, D))
        self.committed_len = 0

    @property
    def position(self) -> int:
        return self.committed_len

    def _ensure(self, n: int) -> None:
        cap = self._keys.shape[1]
        if n <= cap:
            return
        new = max(n, 2 * cap)
        grow = lambda a: np.concatenate(  # noqa: E731
            [a, np.zeros((a.shape[0], new - cap, a.shape[2]))], axis=1)
        self._keys, self._values = grow(self._keys), grow(self._values)

    def snapshot(self) -> "DecoderSnapshot":
        return DecoderSnapshot(self.stream_id, self.committed_len)

    def restore(self, snap: "DecoderSnapshot") -> None:
        if snap.stream_id != self.stream_id:
            raise DecoderStateError("snapshot belongs to a different decoder stream")
        if snap.committed_len > self.committed_len:
            raise DecoderStateError("cannot restore forward past the current cache")
        self.committed_len = snap.committed_len


@dataclass(frozen=True)
class DecoderSnapshot:
    stream_id: int
    committed_len: int


def _split(x, heads):
    # (..., D) -> (..., H, D/H)
    return x.reshape(x.shape[:-1] + (heads, x.shape[-1] // heads))


def decoder_step(state: DecoderState, c, p: DecoderParams) -> np.ndarray:
    """One incremental step on aggregate ``c``; returns V logits and extends the cache."""
    pos = state.committed_len
    if pos >= p.posenc.shape[0]:
        raise DecoderStateError(f"decoder position {pos} exceeds table length {p.posenc.shape[0]}")
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (p.dim,):
        raise ValueError(f"decoder input has shape {c.shape}, expected ({p.dim},)")
    state._ensure(pos + 1)
    H = p.heads
    dh = p.dim // H
    x = c + p.posenc[pos]
    for i, layer in enumerate(p.layers):
        h = layer_norm(x, layer.norm1)
        q = layer.wq @ h
        state._keys[i, pos] = layer.wk @ h
        state._values[i, pos] = layer.wv @ h
        K = _split(state._keys[i, : pos + 1], H)  # (n, H, dh)
        V = _split(state._values[i, : pos + 1], H)
        scores = np.einsum("nhd,hd->hn", K, _split(q, H)) / math.sqrt(dh)
        ctx = np.einsum("hn,nhd->hd", softmax(scores), V).reshape(-1)
        x = x + layer.wo @ ctx
        h2 = layer_norm(x, layer.norm2)
        x = x + layer.w2 @ np.maximum(layer.w1 @ h2, 0.0)
    state.committed_len = pos + 1
    return p.out_w @ layer_norm(x, p.norm_g) + p.out_b


def decoder_forward(c_seq, p: DecoderParams) -> np.ndarray:
    """Offline causal-masked forward; row i equals the logits of incremental step i."""
    x = np.asarray(c_seq, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        return np.zeros((0, p.out_w.shape[0]))
    if n > p.posenc.shape[0]:
        raise DecoderStateError(f"sequence length {n} exceeds table length {p.posenc.shape[0]}")
    H = p.heads
    dh = p.dim // H
    x = x + p.posenc[:n]
    mask = np.triu(np.full((n, n), -np.inf), k=1)
    for layer in p.layers:
        h = layer_norm(x, layer.norm1)
        # (H, n, dh) per projection
        q, k, v = (_split(h @ w.T, H).transpose(1, 0, 2) for w in (layer.wq, layer.wk, layer.wv))
        scores = q @ k.transpose(0, 2, 1) / math.sqrt(dh) + mask
        ctx = (softmax(scores) @ v).transpose(1, 0, 2).reshape(n, -1)
        x = x + ctx @ layer.wo.T
        h2 = layer_norm(x, layer.norm2)
        x = x + np.maximum(h2 @ layer.w1.T, 0.0) @ layer.w2.T
    return layer_norm(x, p.norm_g) @ p.out_w.T + p.out_b
