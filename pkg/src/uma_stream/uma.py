"""Unimodal aggregation: weight head, online valley/peak detection, segment pooling.

Frame t is a *valley* when alpha_t <= alpha_{t-1} and alpha_t <= alpha_{t+1},
a *peak* when both inequalities flip.  Frames between consecutive valleys
(boundaries included, so a valley frame counts in both neighbouring segments)
are pooled by their alpha-weighted mean.

Boundary rules shared by the streaming and offline paths:

* alpha_{-1} is +inf, so frame 0 can be a valley but never a peak.  A valley
  at frame 0 has nothing before it and emits no event.
* A frame satisfying both definitions (a plateau) is a valley.  A frame with
  the same kind and the same alpha as its predecessor continues that run and
  emits nothing.
* The last frame is never classified; finalize closes the open segment there.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class PointKind(enum.Enum):
    VALLEY = "Valley"
    PEAK = "Peak"
    NEITHER = "Neither"


class DegenerateSegmentError(ValueError):
    pass


@dataclass
class UmaEvent:
    kind: PointKind
    frame_index: int
    aggregate: np.ndarray


@dataclass
class UmaParams:
    w: np.ndarray  # (D,)
    b: float

    @classmethod
    def from_bundle(cls, bundle) -> "UmaParams":
        return cls(np.asarray(bundle["uma.w"], dtype=np.float64), float(bundle["uma.b"][0]))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def uma_weight(e_t, p: UmaParams) -> float:
    return float(sigmoid(np.dot(p.w, e_t) + p.b))


def uma_weights(e_seq, p: UmaParams) -> np.ndarray:
    e_seq = np.asarray(e_seq, dtype=np.float64)
    # row-at-a-time dot so the offline path reproduces uma_weight exactly
    return np.array([uma_weight(e, p) for e in e_seq])


def classify_point(a_prev: float, a: float, a_next: float) -> PointKind:
    if a <= a_prev and a <= a_next:
        return PointKind.VALLEY
    if a >= a_prev and a >= a_next:
        return PointKind.PEAK
    return PointKind.NEITHER


def aggregate(frames, alphas) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    if frames.shape[0] == 0 or frames.shape[0] != alphas.shape[0]:
        raise ValueError("aggregate needs equal-length, non-empty frames and alphas")
    den = alphas.sum()
    if den <= 0:
        raise DegenerateSegmentError("segment weights sum to zero")
    return (alphas[:, None] * frames).sum(axis=0) / den


def _suppress_run(kind, a, a_prev, prev_kind):
    if kind is not PointKind.NEITHER and a == a_prev and kind is prev_kind:
        return PointKind.NEITHER
    return kind


class UmaState:
    """Online segmenter. Frame t is classified when alpha_{t+1} arrives."""

    def __init__(self, params: UmaParams, dim: int):
        self.params = params
        self.dim = dim
        self.alpha_prev2 = math.inf
        self.alpha_prev: float | None = None
        self.e_prev: np.ndarray | None = None
        self.prev_kind = PointKind.NEITHER
        self.acc_num = np.zeros(dim)
        self.acc_den = 0.0
        self.segment_start = 0
        self.frames_in_segment = 0
        self.peak_pending: tuple[int, np.ndarray, float] | None = None
        self.frames_seen = 0
        self.trace: list[tuple[int, float, str]] | None = None

    def _accumulate(self, alpha: float, e: np.ndarray) -> None:
        self.acc_num = self.acc_num + alpha * e
        self.acc_den += alpha
        self.frames_in_segment += 1

    def _record(self, frame, alpha, label):
        if self.trace is not None:
            self.trace.append((frame, alpha, label))

    def step(self, e_t, alpha: float | None = None) -> list[UmaEvent]:
        """Push frame t; ``alpha`` overrides the weight head (used by oracles)."""
        e_t = np.asarray(e_t, dtype=np.float64)
        if alpha is None:
            alpha = uma_weight(e_t, self.params)
        events: list[UmaEvent] = []
        if self.alpha_prev is not None:
            j = self.frames_seen - 1
            a_j = self.alpha_prev
            raw = classify_point(self.alpha_prev2, a_j, alpha)
            kind = _suppress_run(raw, a_j, self.alpha_prev2, self.prev_kind)
            self.prev_kind = raw
            self._accumulate(a_j, self.e_prev)
            label = ""
            if kind is PointKind.VALLEY and j > self.segment_start:
                events.append(UmaEvent(kind, j, self.acc_num / self.acc_den))
                self.acc_num = a_j * self.e_prev
                self.acc_den = a_j
                self.frames_in_segment = 1
                self.segment_start = j
                self.peak_pending = None
                label = kind.value
            elif kind is PointKind.PEAK:
                c = self.acc_num / self.acc_den
                self.peak_pending = (j, self.acc_num.copy(), self.acc_den)
                events.append(UmaEvent(kind, j, c))
                label = kind.value
            self._record(j, a_j, label)
        self.alpha_prev2 = math.inf if self.alpha_prev is None else self.alpha_prev
        self.alpha_prev = alpha
        self.e_prev = e_t
        self.frames_seen += 1
        return events

    def finalize(self) -> list[UmaEvent]:
        if self.alpha_prev is None:
            return []
        j = self.frames_seen - 1
        self._accumulate(self.alpha_prev, self.e_prev)
        self._record(j, self.alpha_prev, PointKind.VALLEY.value)
        if self.acc_den <= 0:
            raise DegenerateSegmentError(f"segment ending at frame {j} has zero weight")
        event = UmaEvent(PointKind.VALLEY, j, self.acc_num / self.acc_den)
        self.alpha_prev = None
        return [event]


def classify_sequence(alphas) -> list[PointKind]:
    """Event kind of every frame under the rules above (last frame: NEITHER)."""
    a = [float(x) for x in alphas]
    kinds = []
    prev_raw = PointKind.NEITHER
    for t in range(len(a) - 1):
        prev = a[t - 1] if t > 0 else math.inf
        raw = classify_point(prev, a[t], a[t + 1])
        kinds.append(_suppress_run(raw, a[t], prev, prev_raw))
        prev_raw = raw
    if a:
        kinds.append(PointKind.NEITHER)
    return kinds


def segment_offline(alphas, frames) -> list[UmaEvent]:
    """Brute-force segmentation over the complete alpha sequence.

    Aggregates are recomputed from scratch for each event with :func:`aggregate`,
    independent of the running sums of :class:`UmaState`.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    frames = np.asarray(frames, dtype=np.float64)
    T = len(alphas)
    events = []
    start = 0
    for t, kind in enumerate(classify_sequence(alphas)):
        if kind is PointKind.VALLEY and t > start:
            events.append(UmaEvent(kind, t, aggregate(frames[start:t + 1], alphas[start:t + 1])))
            start = t
        elif kind is PointKind.PEAK:
            events.append(UmaEvent(kind, t, aggregate(frames[start:t + 1], alphas[start:t + 1])))
    if T:
        events.append(UmaEvent(PointKind.VALLEY, T - 1, aggregate(frames[start:], alphas[start:])))
    return events


def write_alpha_csv(path, trace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame_index,alpha,event\n")
        for frame, alpha, label in trace:
            fh.write(f"{frame},{alpha:.9g},{label}\n")
