"""Independent reference computations used by the self-test and the test suite."""

from __future__ import annotations

import itertools
import math

import numpy as np


def ctc_loss_bruteforce(log_probs, labels) -> float:
    """-log of the summed probability of every path that collapses to ``labels``."""
    lp = np.asarray(log_probs, dtype=np.float64)
    T, V = lp.shape
    target = [int(x) for x in labels]
    total = 0.0
    for path in itertools.product(range(V), repeat=T):
        if ctc_greedy_collapse_two_pass(path) == target:
            total += math.exp(sum(lp[t, s] for t, s in enumerate(path)))
    return math.inf if total == 0.0 else -math.log(total)


def ctc_greedy_collapse_two_pass(ids) -> list[int]:
    """Reference collapse done as two explicit passes (merge runs, then drop blanks)."""
    merged = [x for i, x in enumerate(ids) if i == 0 or x != ids[i - 1]]
    return [int(x) for x in merged if x != 0]


def selective_scan_reference(u_seq, x_bcd, dt_w, dt_b, a_log, skip_d):
    """Plain-Python float64 selective SSM, one scalar at a time."""
    u_seq = np.asarray(u_seq, dtype=np.float64)
    T, ED = u_seq.shape
    N = a_log.shape[1]
    h = [[0.0] * N for _ in range(ED)]
    ys = []
    for t in range(T):
        u = u_seq[t]
        bcd = [sum(x_bcd[r, d] * u[d] for d in range(ED)) for r in range(2 * N + 1)]
        B, C, logit = bcd[:N], bcd[N:2 * N], bcd[2 * N]
        y = []
        for d in range(ED):
            z = dt_w[d] * logit + dt_b[d]
            delta = max(z, 0.0) + math.log1p(math.exp(-abs(z)))
            acc = 0.0
            for n in range(N):
                a = -math.exp(a_log[d, n])
                h[d][n] = math.exp(delta * a) * h[d][n] + delta * B[n] * u[d]
                acc += C[n] * h[d][n]
            y.append(acc + skip_d[d] * u[d])
        ys.append(y)
    return np.array(ys), np.array(h)


def dependency_horizon(run, T: int, t: int, dim: int, rng, eps: float = 1.0) -> int:
    """Largest offset j such that perturbing input frame t+j changes output t.

    ``run(x) -> outputs`` maps a ``(T, dim)`` input to per-frame outputs.
    Returns -1 when no probed future frame has any effect.
    """
    base_in = rng.standard_normal((T, dim))
    base = np.asarray(run(base_in))[t]
    horizon = -1
    for j in range(0, T - t):
        x = base_in.copy()
        x[t + j] += eps * rng.standard_normal(dim)
        if not np.array_equal(np.asarray(run(x))[t], base):
            horizon = j
    return horizon
