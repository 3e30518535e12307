"""Selective state-space recurrence and the Mamba encoder block.

Each block: RMS pre-norm, in-projection to an ``E*D`` signal and an ``E*D``
gate, causal depthwise conv of width 4, SiLU, selective SSM, gating by
SiLU(gate), out-projection, residual add.  Per step the SSM computes, from its
own input u_t, a shared ``B_t, C_t`` in R^N and a per-channel step size
``delta_t > 0``; with A = -exp(a_log) it updates

    h <- exp(delta * A) * h + (delta * B) * u
    y  = h @ C + skip_d * u
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONV_WIDTH = 4
NORM_EPS = 1e-5


class NonFiniteError(FloatingPointError):
    def __init__(self, frame_index: int, where: str = "ssm input"):
        self.frame_index = frame_index
        super().__init__(f"non-finite value in {where} at frame {frame_index}")


def softplus(x):
    return np.logaddexp(0.0, x)


def silu(x):
    return x / (1.0 + np.exp(-x))


def rms_norm(x, g, eps=NORM_EPS):
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps) * g


def discretize(delta, a_row, b):
    """Zero-order hold on A, Euler on B: ``(exp(delta*A), delta*B)``."""
    delta = np.asarray(delta, dtype=np.float64)
    if not np.all(delta > 0):
        raise ValueError("discretization step delta must be > 0")
    return np.exp(delta * np.asarray(a_row)), delta * np.asarray(b)


@dataclass
class MambaBlockParams:
    norm_g: np.ndarray  # (D,)
    in_proj: np.ndarray  # (2ED, D), rows [:ED] signal, [ED:] gate
    conv_w: np.ndarray  # (ED, 4), column 3 multiplies the current step
    conv_b: np.ndarray  # (ED,)
    x_bcd: np.ndarray  # (2N+1, ED) -> B, C, delta logit
    dt_w: np.ndarray  # (ED,)
    dt_b: np.ndarray  # (ED,)
    a_log: np.ndarray  # (ED, N)
    skip_d: np.ndarray  # (ED,)
    out_proj: np.ndarray  # (D, ED)
    A: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.A = -np.exp(self.a_log)

    @classmethod
    def from_bundle(cls, bundle, index: int) -> "MambaBlockParams":
        p = f"enc.{index}."
        g = lambda n: np.asarray(bundle[p + n], dtype=np.float64)  # noqa: E731
        return cls(g("norm.g"), g("in_proj.w"), g("conv.w"), g("conv.b"), g("x_bcd.w"),
                   g("dt.w"), g("dt.b"), g("a_log"), g("skip_d"), g("out_proj.w"))

    @property
    def inner_dim(self) -> int:
        return self.a_log.shape[0]

    @property
    def state_size(self) -> int:
        return self.a_log.shape[1]

    def num_params(self) -> int:
        return sum(getattr(self, f).size for f in (
            "norm_g", "in_proj", "conv_w", "conv_b", "x_bcd", "dt_w", "dt_b",
            "a_log", "skip_d", "out_proj"))


class SsmState:
    def __init__(self, inner_dim: int, state_size: int):
        self.h = np.zeros((inner_dim, state_size))
        self.conv_tail = np.zeros((CONV_WIDTH - 1, inner_dim))
        self.steps = 0

    def reset(self) -> None:
        self.h[:] = 0.0
        self.conv_tail[:] = 0.0
        self.steps = 0


def selective_inputs(u, p: MambaBlockParams):
    """Input-dependent ``(B, C, delta)`` for one step or a ``(T, ED)`` sequence."""
    N = p.state_size
    bcd = u @ p.x_bcd.T
    B, C, logit = bcd[..., :N], bcd[..., N:2 * N], bcd[..., 2 * N:]
    delta = softplus(p.dt_w * logit + p.dt_b)
    return B, C, delta


def ssm_step(state: SsmState, u, p: MambaBlockParams) -> np.ndarray:
    if not np.isfinite(u).all():
        raise NonFiniteError(state.steps)
    B, C, delta = selective_inputs(u, p)
    a_bar = np.exp(delta[:, None] * p.A)
    state.h = a_bar * state.h + (delta[:, None] * B[None, :]) * u[:, None]
    state.steps += 1
    return state.h @ C + p.skip_d * u


def ssm_scan(u_seq, p: MambaBlockParams, h0: np.ndarray | None = None) -> np.ndarray:
    """Offline form of :func:`ssm_step` over a ``(T, ED)`` sequence.

    Input projections are batched; the recurrence itself runs sequentially, so
    the cost is linear in T.
    """
    u_seq = np.asarray(u_seq, dtype=np.float64)
    bad = ~np.isfinite(u_seq).all(axis=1)
    if bad.any():
        raise NonFiniteError(int(np.argmax(bad)))
    B, C, delta = selective_inputs(u_seq, p)
    h = np.zeros_like(p.A) if h0 is None else h0.copy()
    y = np.empty_like(u_seq)
    A = p.A
    for t in range(u_seq.shape[0]):
        dt = delta[t][:, None]
        h = np.exp(dt * A) * h + (dt * B[t][None, :]) * u_seq[t][:, None]
        y[t] = h @ C[t]
    return y + p.skip_d * u_seq


def mamba_block_step(state: SsmState, x, p: MambaBlockParams) -> np.ndarray:
    ED = p.inner_dim
    zu = p.in_proj @ rms_norm(x, p.norm_g)
    u, gate = zu[:ED], zu[ED:]
    window = np.concatenate([state.conv_tail, u[None, :]])
    conv = p.conv_b + np.sum(window.T * p.conv_w, axis=1)
    state.conv_tail = window[1:]
    y = ssm_step(state, silu(conv), p)
    return x + p.out_proj @ (y * silu(gate))


def mamba_block_forward(x_seq, p: MambaBlockParams) -> np.ndarray:
    x_seq = np.asarray(x_seq, dtype=np.float64)
    T = x_seq.shape[0]
    ED = p.inner_dim
    zu = rms_norm(x_seq, p.norm_g) @ p.in_proj.T
    u, gate = zu[:, :ED], zu[:, ED:]
    padded = np.concatenate([np.zeros((CONV_WIDTH - 1, ED)), u])
    conv = np.broadcast_to(p.conv_b, (T, ED)).copy()
    for j in range(CONV_WIDTH):
        conv += padded[j: j + T] * p.conv_w[:, j]
    y = ssm_scan(silu(conv), p)
    return x_seq + (y * silu(gate)) @ p.out_proj.T


@dataclass
class EncoderState:
    per_block: list[SsmState]
    frames_seen: int = 0

    @classmethod
    def fresh(cls, blocks: list[MambaBlockParams]) -> "EncoderState":
        return cls([SsmState(b.inner_dim, b.state_size) for b in blocks])


def encoder_step(state: EncoderState, x, blocks: list[MambaBlockParams]) -> np.ndarray:
    if len(state.per_block) != len(blocks):
        raise ValueError(f"state has {len(state.per_block)} blocks, encoder has {len(blocks)}")
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise NonFiniteError(state.frames_seen, "encoder input")
    for s, p in zip(state.per_block, blocks):
        x = mamba_block_step(s, x, p)
    state.frames_seen += 1
    return x


def encoder_forward(x_seq, blocks: list[MambaBlockParams]) -> np.ndarray:
    x = np.asarray(x_seq, dtype=np.float64)
    for p in blocks:
        x = mamba_block_forward(x, p)
    return x


def load_encoder(bundle, num_blocks: int) -> list[MambaBlockParams]:
    return [MambaBlockParams.from_bundle(bundle, i) for i in range(num_blocks)]
