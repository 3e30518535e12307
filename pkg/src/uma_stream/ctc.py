"""CTC loss by the forward (alpha) recursion in log space, and greedy collapse."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

BLANK = 0
NEG = -1e30  # stands in for log(0)


def _logsumexp(*xs: float) -> float:
    m = max(xs)
    if m <= NEG:
        return NEG
    return m + math.log(sum(math.exp(x - m) for x in xs))


def _check_labels(labels: Sequence[int], vocab: int) -> list[int]:
    labels = [int(x) for x in labels]
    for x in labels:
        if x == BLANK:
            raise ValueError("label sequence must not contain the blank id")
        if not 0 < x < vocab:
            raise ValueError(f"label {x} outside vocabulary of size {vocab}")
    return labels


def ctc_loss(log_probs, labels: Sequence[int]) -> float:
    """Negative log-likelihood of ``labels`` under per-frame ``log_probs`` (T x V).

    Returns ``math.inf`` when no alignment of ``labels`` fits in T frames.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2:
        raise ValueError("log_probs must be a T x V matrix")
    T, V = lp.shape
    if T == 0:
        raise ValueError("log_probs has no frames")
    row_sums = np.exp(lp).sum(axis=1)
    if np.max(np.abs(row_sums - 1.0)) > 1e-5:
        raise ValueError("rows of log_probs must be log-softmax normalized")
    labels = _check_labels(labels, V)
    ext = [BLANK]
    for x in labels:
        ext += [x, BLANK]
    S = len(ext)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    if len(labels) + repeats > T:
        return math.inf

    # floor log(0) entries at the sentinel so sums stay finite
    lp = np.maximum(lp, NEG)
    alpha = [NEG] * S
    alpha[0] = lp[0, ext[0]]
    if S > 1:
        alpha[1] = lp[0, ext[1]]
    for t in range(1, T):
        prev = alpha
        alpha = [NEG] * S
        for s in range(S):
            terms = [prev[s]]
            if s >= 1:
                terms.append(prev[s - 1])
            if s >= 2 and ext[s] != BLANK and ext[s] != ext[s - 2]:
                terms.append(prev[s - 2])
            alpha[s] = _logsumexp(*terms) + lp[t, ext[s]]
    total = _logsumexp(alpha[S - 1], alpha[S - 2]) if S > 1 else alpha[0]
    if total <= NEG / 2:
        return math.inf
    return max(0.0, -total)


def ctc_greedy_collapse(ids: Sequence[int]) -> list[int]:
    """Merge repeats, then drop blanks: ``[0,1,1,0,1] -> [1,1]``."""
    out = []
    prev = None
    for x in ids:
        x = int(x)
        if x != prev and x != BLANK:
            out.append(x)
        prev = x
    return out


def log_softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    return x - m - np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
