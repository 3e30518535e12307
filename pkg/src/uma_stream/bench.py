"""Runtime scaling: the sequential selective scan against naive full self-attention."""

from __future__ import annotations

import statistics
import time

import numpy as np

from .ssm import MambaBlockParams, ssm_scan
from .weights import ModelConfig, init_random


def naive_attention(x, wq, wk, wv):
    """Single-head softmax attention over all T x T pairs (quadratic in T)."""
    q, k, v = x @ wq.T, x @ wk.T, x @ wv.T
    scores = (q @ k.T) / np.sqrt(np.float32(q.shape[1]))
    scores -= scores.max(axis=1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=1, keepdims=True)
    return scores @ v


def _elapsed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def median_time(fn, reps: int, warmup: int = 1) -> float:
    for _ in range(warmup):
        fn()
    return statistics.median(_elapsed(fn) for _ in range(reps))


def bench_scaling(lengths, reps: int = 5, seed: int = 0, dim: int = 64, expansion: int = 2,
                  state_size: int = 16) -> list[tuple[int, float, float]]:
    """``(T, scan_ms, attention_ms)`` medians over ``reps`` runs for each T.

    Repetitions go round-robin over the lengths so that slow drift in machine
    speed hits every T alike instead of biasing the ratios between them.
    """
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(model_dim=dim, expansion=expansion, state_size=state_size,
                      num_encoder_blocks=1, num_decoder_blocks=1, max_decoder_len=1)
    block = MambaBlockParams.from_bundle(init_random(cfg, seed), 0)
    w = [rng.uniform(-1, 1, (dim, dim)).astype(np.float32) / np.sqrt(dim) for _ in range(3)]
    jobs = []
    for T in lengths:
        u = rng.standard_normal((T, block.inner_dim))
        x = rng.standard_normal((T, dim)).astype(np.float32)
        jobs.append((lambda u=u: ssm_scan(u, block), lambda x=x: naive_attention(x, *w)))
    for scan, attn in jobs:
        scan()
        attn()
    samples = [([], []) for _ in jobs]
    for _ in range(reps):
        for (scan, attn), (ts, ta) in zip(jobs, samples):
            ts.append(_elapsed(scan))
            ta.append(_elapsed(attn))
    return [(int(T), 1e3 * statistics.median(ts), 1e3 * statistics.median(ta))
            for T, (ts, ta) in zip(lengths, samples)]


def format_csv(rows, seed: int) -> str:
    lines = [f"# seed={seed}", "T,encoder_ms,attention_reference_ms"]
    lines += [f"{T},{e:.3f},{a:.3f}" for T, e, a in rows]
    return "\n".join(lines) + "\n"
