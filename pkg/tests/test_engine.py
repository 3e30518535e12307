import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from et_fixture import NEUTRAL, bump, fixture_model, frames, run
from uma_stream import Model, init_random
from uma_stream.engine import (
    StreamFinalizedError,
    StreamHandle,
    Trigger,
    format_emission_log,
    offline_recognize,
    parse_emission_log,
    stream_recognize,
)
from uma_stream.selftest import random_config

VALLEY, PEAK = Trigger.VALLEY, Trigger.PEAK_ET

DUP = bump(5) + bump(6)
BLANK_PEAK = bump([NEUTRAL] * 4 + [5] * 3) + bump([NEUTRAL] * 4 + [6] * 3)
SWITCH = bump([NEUTRAL] * 4 + [5] * 3) + bump([3] * 4 + [6] * 5, fall=5)


def summary(emissions):
    return [(e.token_id, e.trigger, e.trigger_frame, e.timestamp_ms) for e in emissions]


@pytest.fixture(scope="module")
def model():
    return fixture_model()


def test_blank_segment_is_dropped(model):
    em, tr = run(model, bump(5) + bump(NEUTRAL) + bump(7), et=False)
    assert [d[0] for d in tr.decodes] == ["Valley"] * 3
    assert [int(np.argmax(d[2])) for d in tr.decodes] == [5, 0, 7]
    assert [e.token_id for e in em] == [5, 7]


def test_repeat_across_blank_is_kept(model):
    em, _ = run(model, bump(5) + bump(NEUTRAL) + bump(5), et=False)
    assert [e.token_id for e in em] == [5, 5]


def test_adjacent_repeat_is_merged(model):
    em, _ = run(model, bump(5) + bump(5), et=False)
    assert [e.token_id for e in em] == [5]


def test_dedup_moves_emission_to_peak(model):
    off, _ = run(model, DUP, et=False)
    on, _ = run(model, DUP, et=True)
    assert summary(off) == [(5, VALLEY, 6, 224), (6, VALLEY, 13, 448)]
    assert summary(on) == [(5, PEAK, 3, 128), (6, PEAK, 10, 352)]
    for a, b in zip(on, off):
        assert b.timestamp_ms - a.timestamp_ms == (b.trigger_frame - a.trigger_frame) * 32


def test_blank_peak_changes_nothing(model):
    off, _ = run(model, BLANK_PEAK, et=False)
    on, tr = run(model, BLANK_PEAK, et=True)
    assert summary(on) == summary(off)
    # both peaks were decoded and rolled back
    assert [d[0] for d in tr.decodes] == ["Peak", "Valley", "Peak", "Valley"]


def test_switch_adds_one_emission(model):
    off, _ = run(model, SWITCH, et=False)
    on, _ = run(model, SWITCH, et=True)
    assert [e.token_id for e in off] == [5, 6]
    assert summary(on) == [summary(off)[0], (3, PEAK, 10, 352), summary(off)[1]]


def test_rollback_policy_keeps_decoder_clean(model):
    on, tr = run(model, SWITCH, et=True, policy="rollback")
    assert [e.token_id for e in on] == [5, 3, 6]
    # the rolled-back peak leaves the valley decode where ET-off would put it
    off, tr_off = run(model, SWITCH, et=False)
    valley_logits = [d[2] for d in tr.decodes if d[0] == "Valley"]
    np.testing.assert_array_equal(valley_logits, [d[2] for d in tr_off.decodes])


def test_peak_final_policy_drops_valley(model):
    on, _ = run(model, SWITCH, et=True, policy="peak_final")
    assert summary(on) == [(5, VALLEY, 6, 224), (3, PEAK, 10, 352)]


@pytest.mark.parametrize("k", [3, 9, 17, 33])
def test_lookahead_shifts_timestamps(k):
    base, _ = run(fixture_model(1), SWITCH, et=True)
    shifted, _ = run(fixture_model(k), SWITCH, et=True)
    d = (k - 1) // 2
    assert [e.key() for e in shifted] == [e.key() for e in base]
    assert [e.emit_frame - b.emit_frame for e, b in zip(shifted, base)] == [d] * len(base)
    assert [e.timestamp_ms - b.timestamp_ms for e, b in zip(shifted, base)] == [32 * d] * len(base)


def test_emit_frame_accounting(model):
    for e in run(model, SWITCH, et=True)[0]:
        assert e.emit_frame == e.trigger_frame + 1
        assert e.timestamp_ms == 32 * e.emit_frame


def test_cut_mid_segment_decodes_once_at_finalize(model):
    sched = bump(5) + bump(6)[:3]
    h = StreamHandle(model, et_enabled=False, trace=True)
    for x in frames(sched):
        h.push_embedding(x)
    before = len(h.trace.decodes)
    tail = h.finalize()
    assert len(h.trace.decodes) == before + 1
    assert [e.token_id for e in tail] == [6]


def test_finalize_contract(model):
    h = StreamHandle(model)
    assert h.finalize() == []
    with pytest.raises(StreamFinalizedError):
        h.finalize()
    with pytest.raises(StreamFinalizedError):
        h.push_embedding(np.zeros(16))


def test_silence_emits_nothing(model):
    em, _ = run(model, [(NEUTRAL, 0.0)] * 20, et=True)
    assert em == []


def test_empty_offline():
    cfg = random_config(np.random.default_rng(0))
    m = Model.from_bundle(cfg, init_random(cfg, 0))
    assert offline_recognize(np.zeros((0, 80)), m) == []
    assert stream_recognize(np.zeros((0, 80)), m) == []


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 2**31), st.booleans())
def test_stream_equals_offline_random(seed, et):
    rng = np.random.default_rng(seed)
    cfg = random_config(rng, num_encoder_blocks=1)
    m = Model.from_bundle(cfg, init_random(cfg, seed))
    feats = rng.standard_normal((int(rng.integers(0, 200)), 80))
    s = stream_recognize(feats, m, et)
    o = offline_recognize(feats, m, et)
    assert [e.key() for e in s] == [e.key() for e in o]
    assert s == o
    ts = [e.timestamp_ms for e in s]
    assert ts == sorted(ts)


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 2**31))
def test_et_never_delays(seed):
    rng = np.random.default_rng(seed)
    cfg = random_config(rng, num_encoder_blocks=1)
    m = Model.from_bundle(cfg, init_random(cfg, seed))
    x = rng.standard_normal((int(rng.integers(20, 200)), cfg.model_dim)) * 2
    off = offline_recognize(x, m, False, input_stage="encoder")
    on = offline_recognize(x, m, True, input_stage="encoder")
    if [e.token_id for e in on] == [e.token_id for e in off]:
        assert all(a.timestamp_ms <= b.timestamp_ms for a, b in zip(on, off))


def test_unknown_input_stage():
    cfg = random_config(np.random.default_rng(0))
    m = Model.from_bundle(cfg, init_random(cfg, 0))
    with pytest.raises(ValueError):
        offline_recognize(np.zeros((4, 80)), m, input_stage="audio")


def test_emission_log_roundtrip(model):
    em, _ = run(model, SWITCH, et=True)
    text = "# header\n" + format_emission_log("utt1", em) + format_emission_log("utt2", em[:1])
    parsed = parse_emission_log(text)
    assert parsed["utt1"] == [(e.token_id, e.trigger.value, e.timestamp_ms) for e in em]
    assert len(parsed["utt2"]) == 1
    with pytest.raises(ValueError):
        parse_emission_log("u\t1\tMaybe\t30\n")
