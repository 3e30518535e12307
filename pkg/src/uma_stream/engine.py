"""Streaming recognizer: subsampler -> Mamba encoder -> lookahead -> UMA -> decoder.

A token is decoded at every UMA valley from the frames since the previous
valley.  With early termination (ET) an extra, speculative decode runs at
each UMA peak on the frames seen so far in the segment:

* non-blank peak token: emitted right away and the decoder step is kept; the
  valley decode that follows is dropped if it repeats the token,
* blank peak token: the decoder is rolled back and the segment proceeds as
  without ET,
* a different valley token is emitted as well.

Decoded ids pass through streaming CTC collapse (blank and immediate repeats
produce no emission).  Emission times are charged the one-frame
classification delay plus the lookahead delay of (k-1)/2 frames.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .ctc import BLANK
from .decoder import DecoderParams, DecoderState, decoder_forward, decoder_step
from .frontend import SubsampleParams, SubsampleState, subsample_offline
from .lookahead import LookaheadBuffer, LookaheadParams, lookahead_forward
from .ssm import EncoderState, encoder_forward, encoder_step, load_encoder
from .uma import PointKind, UmaEvent, UmaParams, UmaState, segment_offline, uma_weights
from .weights import ModelConfig, TensorBundle, check_bundle


class StreamFinalizedError(RuntimeError):
    pass


class Trigger(str, enum.Enum):
    VALLEY = "Valley"
    PEAK_ET = "PeakET"


@dataclass(frozen=True)
class Emission:
    token_id: int
    trigger: Trigger
    trigger_frame: int
    emit_frame: int
    timestamp_ms: int

    def key(self) -> tuple[int, str, int]:
        return (self.token_id, self.trigger.value, self.trigger_frame)


@dataclass
class Model:
    """Float64 working copy of a bundle, checked against its config."""

    config: ModelConfig
    subsample: SubsampleParams
    encoder: list
    lookahead: LookaheadParams
    uma: UmaParams
    decoder: DecoderParams

    @classmethod
    def from_bundle(cls, config: ModelConfig, bundle: TensorBundle) -> "Model":
        check_bundle(config, bundle)
        return cls(
            config,
            SubsampleParams.from_bundle(bundle),
            load_encoder(bundle, config.num_encoder_blocks),
            LookaheadParams.from_bundle(bundle),
            UmaParams.from_bundle(bundle),
            DecoderParams.from_bundle(bundle, config.num_decoder_blocks, config.decoder_heads),
        )


@dataclass
class Trace:
    """Intermediate signals, recorded on request for equivalence checks."""

    encoder: list = field(default_factory=list)
    lookahead: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    decodes: list = field(default_factory=list)  # (kind, frame, logits)
    uma: list = field(default_factory=list)  # (frame, alpha, event label)


class _Emitter:
    """ET / collapse state machine, shared by the streaming and offline paths.

    ``decoder`` needs ``step(c) -> logits``, ``snapshot()`` and ``restore(s)``.
    """

    def __init__(self, config: ModelConfig, decoder, et_enabled: bool, trace: Trace | None):
        self.config = config
        self.decoder = decoder
        self.et = et_enabled
        self.policy = config.et_policy
        self.delay = 1 + config.lookahead_frames
        self.last_token: int | None = None
        self.peak_token: int | None = None
        self.trace = trace

    def _emission(self, token, trigger, frame) -> Emission:
        emit_frame = frame + self.delay
        return Emission(int(token), trigger, frame, emit_frame,
                        emit_frame * self.config.frame_shift_ms)

    def _decode(self, ev: UmaEvent) -> int:
        logits = self.decoder.step(ev.aggregate)
        if self.trace is not None:
            self.trace.decodes.append((ev.kind.value, ev.frame_index, logits))
        return int(np.argmax(logits))

    def on_event(self, ev: UmaEvent) -> list[Emission]:
        if ev.kind is PointKind.PEAK:
            return self._on_peak(ev) if self.et else []
        return self._on_valley(ev)

    def _on_peak(self, ev: UmaEvent) -> list[Emission]:
        if self.peak_token is not None:
            # one speculative emission per segment
            return []
        snap = self.decoder.snapshot()
        token = self._decode(ev)
        if token == BLANK or token == self.last_token:
            self.decoder.restore(snap)
            return []
        if self.policy == "rollback":
            self.decoder.restore(snap)
        self.peak_token = token
        self.last_token = token
        return [self._emission(token, Trigger.PEAK_ET, ev.frame_index)]

    def _on_valley(self, ev: UmaEvent) -> list[Emission]:
        token = self._decode(ev)
        peak, self.peak_token = self.peak_token, None
        if peak is not None and self.policy == "peak_final":
            return []
        previous, self.last_token = self.last_token, token
        if token == BLANK or token == previous:
            return []
        return [self._emission(token, Trigger.VALLEY, ev.frame_index)]


class StreamHandle:
    """Per-stream recognizer state; feed frames in order, then :meth:`finalize`."""

    def __init__(self, model: Model, et_enabled: bool | None = None, trace: bool = False):
        cfg = model.config
        self.model = model
        self.config = cfg
        self.trace = Trace() if trace else None
        self.subsample = SubsampleState(model.subsample, cfg.feat_dim)
        self.encoder = EncoderState.fresh(model.encoder)
        self.lookahead = LookaheadBuffer(model.lookahead, cfg.model_dim)
        self.uma = UmaState(model.uma, cfg.model_dim)
        if self.trace is not None:
            self.uma.trace = self.trace.uma
        self.decoder = DecoderState(model.decoder)
        et = cfg.et_enabled if et_enabled is None else et_enabled
        self._emitter = _Emitter(cfg, self, et, self.trace)
        self.emitted: list[Emission] = []
        self.finalized = False

    # decoder protocol used by _Emitter
    def step(self, c):
        return decoder_step(self.decoder, c, self.model.decoder)

    def snapshot(self):
        return self.decoder.snapshot()

    def restore(self, snap):
        self.decoder.restore(snap)

    @property
    def frame_clock(self) -> int:
        return self.encoder.frames_seen

    def _check_open(self):
        if self.finalized:
            raise StreamFinalizedError("stream already finalized")

    def push_frame(self, frame) -> list[Emission]:
        """Push one 80-dim filterbank frame (8 ms shift)."""
        self._check_open()
        x = self.subsample.step(frame)
        return [] if x is None else self._encoder_frame(x)

    def push_embedding(self, x) -> list[Emission]:
        """Push one subsampled D-dim frame, bypassing the frontend."""
        self._check_open()
        return self._encoder_frame(x)

    def _encoder_frame(self, x) -> list[Emission]:
        enc = encoder_step(self.encoder, x, self.model.encoder)
        if self.trace is not None:
            self.trace.encoder.append(enc)
        return self._on_lookahead(self.lookahead.step(enc))

    def _on_lookahead(self, outputs) -> list[Emission]:
        out = []
        for e in outputs:
            if self.trace is not None:
                self.trace.lookahead.append(e)
            for ev in self.uma.step(e):
                out += self._emitter.on_event(ev)
        self.emitted += out
        return out

    def finalize(self) -> list[Emission]:
        self._check_open()
        self.finalized = True
        out = self._on_lookahead(self.lookahead.finalize())
        tail = []
        for ev in self.uma.finalize():
            tail += self._emitter.on_event(ev)
        self.emitted += tail
        if self.trace is not None:
            self.trace.alphas = [a for _, a, _ in self.trace.uma]
        return out + tail


class _OfflineDecoder:
    """Decoder driven through the masked whole-sequence forward."""

    def __init__(self, params: DecoderParams):
        self.params = params
        self.inputs: list[np.ndarray] = []

    def step(self, c):
        self.inputs.append(np.asarray(c, dtype=np.float64))
        return decoder_forward(np.stack(self.inputs), self.params)[-1]

    def snapshot(self):
        return len(self.inputs)

    def restore(self, n):
        del self.inputs[n:]


def offline_recognize(features, model: Model, et_enabled: bool | None = None, *,
                      input_stage: str = "fbank", trace: Trace | None = None) -> list[Emission]:
    """Whole-utterance run of the same pipeline.

    ``input_stage="fbank"`` takes 80-dim filterbank frames; ``"encoder"`` takes
    already subsampled D-dim frames (the input of :meth:`StreamHandle.push_embedding`).
    """
    cfg = model.config
    feats = np.asarray(features, dtype=np.float64)
    if input_stage == "fbank":
        x = subsample_offline(feats.reshape(-1, cfg.feat_dim), model.subsample)
    elif input_stage == "encoder":
        x = feats.reshape(-1, cfg.model_dim)
    else:
        raise ValueError(f"unknown input stage {input_stage!r}")
    enc = encoder_forward(x, model.encoder)
    e = lookahead_forward(enc, model.lookahead)
    alphas = uma_weights(e, model.uma)
    if trace is not None:
        trace.encoder = list(enc)
        trace.lookahead = list(e)
        trace.alphas = list(alphas)
    et = cfg.et_enabled if et_enabled is None else et_enabled
    emitter = _Emitter(cfg, _OfflineDecoder(model.decoder), et, trace)
    out = []
    for ev in segment_offline(alphas, e):
        out += emitter.on_event(ev)
    return out


def stream_recognize(features, model: Model, et_enabled: bool | None = None, *,
                     input_stage: str = "fbank", handle: StreamHandle | None = None) -> list[Emission]:
    h = handle or StreamHandle(model, et_enabled)
    push = h.push_frame if input_stage == "fbank" else h.push_embedding
    out = []
    for frame in np.asarray(features, dtype=np.float64):
        out += push(frame)
    return out + h.finalize()


def format_emission_log(utt_id: str, emissions: list[Emission]) -> str:
    return "".join(
        f"{utt_id}\t{e.token_id}\t{e.trigger.value}\t{e.timestamp_ms}\n" for e in emissions
    )


def parse_emission_log(text: str) -> dict[str, list[tuple[int, str, int]]]:
    """``utt_id -> [(token_id, trigger, emit_ms), ...]`` in file order."""
    out: dict[str, list[tuple[int, str, int]]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"emission log line {lineno}: expected 4 tab-separated fields")
        utt, token, trigger, ms = parts
        if trigger not in (Trigger.VALLEY.value, Trigger.PEAK_ET.value):
            raise ValueError(f"emission log line {lineno}: unknown trigger {trigger!r}")
        out.setdefault(utt, []).append((int(token), trigger, int(ms)))
    return out
