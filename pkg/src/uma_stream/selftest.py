"""Oracle suites runnable from the command line (``uma-stream selftest``)."""

from __future__ import annotations

import io
import math
import time
from typing import Callable

import numpy as np

from . import ctc, oracles
from .engine import Model, StreamHandle, offline_recognize
from .lookahead import LookaheadBuffer, LookaheadParams, lookahead_forward
from .uma import UmaParams, UmaState, segment_offline
from .weights import (
    ModelConfig,
    TensorBundle,
    WeightFormatError,
    init_random,
    load_bundle,
    load_bundle_file,
    save_bundle,
)


def random_config(rng, **overrides) -> ModelConfig:
    D = int(rng.choice([32, 64]))
    base = dict(
        model_dim=D,
        expansion=int(rng.choice([2, 4])),
        state_size=int(rng.choice([8, 16])),
        num_encoder_blocks=int(rng.choice([1, 4])),
        lookahead_kernel=int(rng.choice([1, 9, 17])),
        num_decoder_blocks=int(rng.choice([1, 2])),
        decoder_heads=int(rng.choice([2, 4])),
        decoder_ff_dim=2 * D,
        vocab_size=int(rng.integers(4, 24)),
        subsample_channels=8,
        max_decoder_len=1024,
    )
    base.update(overrides)
    return ModelConfig(**base)


def random_bundle(rng, max_tensors: int = 6) -> TensorBundle:
    b = TensorBundle()
    for i in range(int(rng.integers(0, max_tensors + 1))):
        shape = tuple(int(d) for d in rng.integers(0, 5, size=int(rng.integers(0, 4))))
        name = f"t{i}." + "".join(rng.choice(list("abcxyz_é字"), size=int(rng.integers(1, 6))))
        b.add(name, rng.standard_normal(shape))
    return b


def _random_alpha_frames(rng, T, D):
    if rng.random() < 0.2:
        # quantized weights exercise plateaus and ties
        alphas = rng.integers(1, 5, size=T) / 5.0
    else:
        alphas = rng.uniform(0.01, 0.99, size=T)
    return alphas, rng.standard_normal((T, D))


def stream_segment(alphas, frames):
    """Run the online segmenter with externally supplied weights."""
    st = UmaState(UmaParams(np.zeros(frames.shape[1]), 0.0), frames.shape[1])
    events = []
    for a, e in zip(alphas, frames):
        events += st.step(e, alpha=float(a))
    return events + st.finalize()


def events_match(a, b, tol=1e-6) -> bool:
    if len(a) != len(b):
        return False
    return all(x.kind == y.kind and x.frame_index == y.frame_index
               and np.max(np.abs(x.aggregate - y.aggregate)) <= tol for x, y in zip(a, b))


def suite_uma(rng, n=200):
    for _ in range(n):
        T = int(rng.integers(1, 201))
        alphas, frames = _random_alpha_frames(rng, T, 4)
        if not events_match(stream_segment(alphas, frames), segment_offline(alphas, frames)):
            raise AssertionError(f"streaming UMA differs from brute force (T={T})")
    return f"{n} sequences"


def suite_ctc(rng, n=100):
    worst = 0.0
    for _ in range(n):
        T, V = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        L = int(rng.integers(0, 4))
        labels = list(rng.integers(1, V, size=L))
        lp = ctc.log_softmax(rng.standard_normal((T, V)) * 2)
        got, want = ctc.ctc_loss(lp, labels), oracles.ctc_loss_bruteforce(lp, labels)
        if math.isinf(want) or math.isinf(got):
            if got != want:
                raise AssertionError(f"feasibility mismatch {got} vs {want}")
            continue
        worst = max(worst, abs(got - want))
        if abs(got - want) > 1e-6:
            raise AssertionError(f"ctc loss {got} != brute force {want}")
    return f"{n} draws, max err {worst:.1e}"


def suite_stream(rng, n=4):
    for _ in range(n):
        cfg = random_config(rng)
        model = Model.from_bundle(cfg, init_random(cfg, int(rng.integers(1 << 31))))
        feats = rng.standard_normal((int(rng.integers(4, 400)), cfg.feat_dim))
        for et in (False, True):
            h = StreamHandle(model, et_enabled=et)
            stream = [e for f in feats for e in h.push_frame(f)] + h.finalize()
            offline = offline_recognize(feats, model, et_enabled=et)
            if [e.key() for e in stream] != [e.key() for e in offline]:
                raise AssertionError(f"stream/offline emissions differ (et={et}, cfg={cfg})")
    return f"{n} configs x ET on/off"


def suite_lookahead(rng):
    D = 4
    for k in (3, 9, 17):
        p = LookaheadParams(rng.uniform(-1, 1, (D, k)), rng.uniform(-1, 1, D), np.ones(D), np.zeros(D))

        def run(x):
            buf = LookaheadBuffer(p, D)
            return [y for e in x for y in buf.step(e)] + buf.finalize()

        horizon = oracles.dependency_horizon(run, 3 * k, k, D, rng)
        if horizon != (k - 1) // 2:
            raise AssertionError(f"k={k}: horizon {horizon}, expected {(k - 1) // 2}")
        x = rng.standard_normal((2 * k, D))
        if not np.array_equal(np.stack(run(x)), lookahead_forward(x, p)):
            raise AssertionError(f"k={k}: streaming lookahead differs from offline")
    return "k in {3, 9, 17}"


def suite_weights(rng, bundle_path=None):
    if bundle_path is not None:
        b = load_bundle_file(bundle_path)
        return f"loaded {len(b)} tensors from {bundle_path}"
    for _ in range(50):
        b = random_bundle(rng)
        buf = io.BytesIO()
        save_bundle(b, buf)
        if load_bundle(io.BytesIO(buf.getvalue())) != b:
            raise AssertionError("bundle round trip not bit-exact")
    try:
        load_bundle(io.BytesIO(b"XXXX" + bytes(8)))
    except WeightFormatError:
        pass
    else:
        raise AssertionError("bad magic accepted")
    return "50 round trips"


def run_selftest(filter_: str | None = None, seed: int = 0, bundle_path=None,
                 out: Callable[[str], None] = print) -> bool:
    rng = np.random.default_rng(seed)
    suites = [
        ("weights", lambda: suite_weights(rng, bundle_path)),
        ("uma", lambda: suite_uma(rng)),
        ("ctc", lambda: suite_ctc(rng)),
        ("lookahead", lambda: suite_lookahead(rng)),
        ("stream", lambda: suite_stream(rng)),
    ]
    if filter_:
        suites = [s for s in suites if filter_ in s[0]]
        if not suites:
            out(f"no suite matches {filter_!r}")
            return False
    ok = True
    skip_rest = False
    out(f"{'suite':<10} {'status':<6} detail")
    for name, fn in suites:
        if skip_rest:
            out(f"{name:<10} {'SKIP':<6} previous load failure")
            continue
        t0 = time.perf_counter()
        try:
            detail = fn()
            status = "PASS"
        except Exception as exc:  # report every failure kind in the matrix
            detail, status, ok = f"{type(exc).__name__}: {exc}", "FAIL", False
            if name == "weights" and bundle_path is not None:
                skip_rest = True
        out(f"{name:<10} {status:<6} {detail} ({time.perf_counter() - t0:.1f}s)")
    return ok
