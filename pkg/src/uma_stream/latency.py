"""First-token, last-token and average recognition latency.

Per-token latency is ``emit_ms - truth_end_ms`` with emissions and ground-truth
tokens matched by position.  The worst ``floor(0.10 * n)`` tokens are treated
as outliers and dropped before any measure is taken.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence


class EmptyReportError(ValueError):
    pass


@dataclass
class LatencyReport:
    ft_ms: float
    lt_ms: float
    avg_ms: float
    tokens_total: int
    tokens_excluded: int
    tokens_unmatched: int = 0
    utterances: int = 0

    def to_json(self) -> str:
        # NaN (every first or last token was an outlier) becomes null
        d = {k: (None if isinstance(v, float) and math.isnan(v) else v)
             for k, v in asdict(self).items()}
        return json.dumps(d, indent=2, sort_keys=True)


def _emit_ms(item) -> float:
    if hasattr(item, "timestamp_ms"):
        return item.timestamp_ms
    if isinstance(item, (tuple, list)):
        return item[-1]
    return item


def _mean(xs):
    return sum(xs) / len(xs) if xs else math.nan


def compute_latency(
    emissions: Mapping[str, Sequence],
    truths: Mapping[str, Sequence[float]],
    outlier_fraction: float = 0.10,
    exclusion: str = "pooled",
) -> LatencyReport:
    """Latency statistics over a test set.

    ``emissions`` maps utterance id to emitted tokens (plain ms values,
    :class:`~uma_stream.engine.Emission` objects or parsed log tuples);
    ``truths`` maps utterance id to ground-truth token end times.

    ``exclusion="pooled"`` drops the worst tokens of the whole set once and
    takes FT/LT/Avg from what is left (first or last tokens that were dropped
    are skipped for their utterance).  ``"per_measure"`` instead applies the
    rule separately to the first-token, last-token and all-token populations.
    """
    if exclusion not in ("pooled", "per_measure"):
        raise ValueError(f"unknown exclusion mode {exclusion!r}")
    tokens = []  # (latency, utt_id, index, is_first, is_last)
    unmatched = 0
    utts = 0
    for utt in sorted(set(emissions) | set(truths)):
        emit = [_emit_ms(e) for e in emissions.get(utt, ())]
        truth = list(truths.get(utt, ()))
        m = min(len(emit), len(truth))
        unmatched += max(len(emit), len(truth)) - m
        if m:
            utts += 1
        for i in range(m):
            tokens.append((emit[i] - truth[i], utt, i, i == 0, i == m - 1))
    if not tokens:
        raise EmptyReportError("no matched tokens to score")
    if unmatched:
        warnings.warn(f"{unmatched} emitted/reference tokens had no positional match", stacklevel=2)

    def drop_worst(pop):
        n_drop = math.floor(outlier_fraction * len(pop))
        # ties broken by (utt, index) so the result ignores input ordering
        ranked = sorted(pop, key=lambda t: (t[0], t[1], t[2]))
        return ranked[: len(ranked) - n_drop], n_drop

    if exclusion == "pooled":
        kept, n_drop = drop_worst(tokens)
        ft = _mean([t[0] for t in kept if t[3]])
        lt = _mean([t[0] for t in kept if t[4]])
        avg = _mean([t[0] for t in kept])
    else:
        kept, n_drop = drop_worst(tokens)
        avg = _mean([t[0] for t in kept])
        ft = _mean([t[0] for t in drop_worst([t for t in tokens if t[3]])[0]])
        lt = _mean([t[0] for t in drop_worst([t for t in tokens if t[4]])[0]])
    return LatencyReport(ft, lt, avg, len(tokens), n_drop, unmatched, utts)


def chunk_timestamp_rule(token_ms: Sequence[int], chunk_ms: int) -> list[int]:
    """Move each token time to the end of its chunk: least multiple of chunk_ms >= t."""
    if chunk_ms <= 0:
        raise ValueError("chunk_ms must be positive")
    return [-(-int(t) // chunk_ms) * chunk_ms for t in token_ms]


def read_alignments_csv(text: str) -> dict[str, list[float]]:
    """Parse ``utt_id,token_index,end_ms`` rows (header optional)."""
    rows: dict[str, dict[int, float]] = {}
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or row[0].startswith("#"):
            continue
        if lineno == 1 and row[0] == "utt_id":
            continue
        if len(row) != 3:
            raise ValueError(f"alignment line {lineno}: expected utt_id,token_index,end_ms")
        utt, idx, end = row[0].strip(), int(row[1]), float(row[2])
        if end < 0:
            raise ValueError(f"alignment line {lineno}: negative end time")
        rows.setdefault(utt, {})[idx] = end
    out = {}
    for utt, by_index in rows.items():
        if sorted(by_index) != list(range(len(by_index))):
            raise ValueError(f"alignment for {utt!r} has gaps in token_index")
        ends = [by_index[i] for i in range(len(by_index))]
        if any(b < a for a, b in zip(ends, ends[1:])):
            raise ValueError(f"alignment for {utt!r} is not monotone")
        out[utt] = ends
    return out


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance (unit costs), for desk CER checks."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]
