import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uma_stream.weights import (
    BadMagicError,
    ConfigError,
    DuplicateTensorError,
    ModelConfig,
    ShapeMismatchError,
    TensorBundle,
    TrailingBytesError,
    TruncatedStreamError,
    UnsupportedVersionError,
    WeightFormatError,
    check_bundle,
    encoder_block_param_count,
    init_random,
    load_bundle,
    save_bundle,
    tensor_layout,
)

SMALL = ModelConfig(model_dim=32, state_size=4, num_encoder_blocks=2, num_decoder_blocks=1,
                    decoder_heads=2, decoder_ff_dim=64, vocab_size=8, subsample_channels=4,
                    max_decoder_len=64)


def roundtrip(bundle):
    buf = io.BytesIO()
    n = save_bundle(bundle, buf)
    assert n == len(buf.getvalue())
    return load_bundle(io.BytesIO(buf.getvalue()))


def encode(bundle):
    buf = io.BytesIO()
    save_bundle(bundle, buf)
    return buf.getvalue()


def test_empty_bundle_is_twelve_bytes():
    data = encode(TensorBundle())
    assert data == b"UMAW" + struct.pack("<II", 1, 0)
    assert len(roundtrip(TensorBundle())) == 0


def test_single_tensor_roundtrip():
    b = TensorBundle()
    b.add("w", np.arange(6, dtype=np.float32).reshape(2, 3))
    out = roundtrip(b)
    assert out == b
    assert out["w"].shape == (2, 3)
    assert out["w"].dtype == np.float32


names = st.text(st.characters(blacklist_categories=("Cs",)), min_size=0, max_size=12)
shapes = st.lists(st.integers(0, 4), min_size=0, max_size=4).map(tuple)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(names, shapes), max_size=6, unique_by=lambda t: t[0]),
       st.integers(0, 2**32 - 1))
def test_roundtrip_property(entries, seed):
    rng = np.random.default_rng(seed)
    b = TensorBundle()
    for name, shape in entries:
        data = rng.standard_normal(shape).astype(np.float32)
        if data.size:
            data.reshape(-1)[0] = np.nan  # payload bits must survive too
        b.add(name, data)
    assert roundtrip(b) == b


def test_bad_magic():
    with pytest.raises(BadMagicError):
        load_bundle(io.BytesIO(b"XXXX" + struct.pack("<II", 1, 0)))


def test_unsupported_version():
    with pytest.raises(UnsupportedVersionError):
        load_bundle(io.BytesIO(b"UMAW" + struct.pack("<II", 2, 0)))


def test_truncation_at_every_byte_is_rejected():
    b = TensorBundle()
    b.add("alpha", np.ones((2, 2)))
    b.add("beta", np.zeros(3))
    data = encode(b)
    for cut in range(len(data)):
        with pytest.raises(TruncatedStreamError):
            load_bundle(io.BytesIO(data[:cut]))


def test_truncated_data_names_the_tensor():
    b = TensorBundle()
    b.add("alpha", np.ones((2, 2)))
    b.add("beta", np.zeros(3))
    data = encode(b)
    with pytest.raises(TruncatedStreamError) as exc:
        load_bundle(io.BytesIO(data[:-2]))
    assert exc.value.tensor == "beta"
    assert "beta" in str(exc.value)


def test_trailing_bytes():
    data = encode(TensorBundle()) + b"\0"
    with pytest.raises(TrailingBytesError):
        load_bundle(io.BytesIO(data))


def test_duplicate_name_in_stream():
    b = TensorBundle()
    b.add("x", np.ones(2))
    data = bytearray(encode(b))
    record = bytes(data[12:])
    data[8:12] = struct.pack("<I", 2)
    with pytest.raises(DuplicateTensorError):
        load_bundle(io.BytesIO(bytes(data) + record))


def test_invalid_utf8_name():
    raw = b"UMAW" + struct.pack("<III", 1, 1, 1) + b"\xff" + struct.pack("<I", 0) + b"\0" * 4
    with pytest.raises(WeightFormatError):
        load_bundle(io.BytesIO(raw))


def test_add_rejects_wrong_length():
    with pytest.raises(ShapeMismatchError):
        TensorBundle().add("x", np.ones(5), shape=(2, 3))


def test_error_classes_share_a_base():
    for cls in (BadMagicError, UnsupportedVersionError, TruncatedStreamError,
                ShapeMismatchError, DuplicateTensorError, TrailingBytesError):
        assert issubclass(cls, WeightFormatError)


def test_init_is_pure_function_of_seed():
    assert init_random(SMALL, 7) == init_random(SMALL, 7)
    assert init_random(SMALL, 7) != init_random(SMALL, 8)


def test_init_matches_layout_and_passes_check():
    b = init_random(SMALL, 1)
    layout = tensor_layout(SMALL)
    assert list(b) == [name for name, *_ in layout]
    check_bundle(SMALL, b)


def test_init_gives_contracting_ssm():
    b = init_random(SMALL, 3)
    A = -np.exp(b["enc.0.a_log"].astype(np.float64))
    dt = np.log1p(np.exp(b["enc.0.dt.b"].astype(np.float64)))
    a_bar = np.exp(dt[:, None] * A)
    assert np.all((a_bar > 0) & (a_bar < 1))
    assert dt.min() >= 1e-3 * 0.999 and dt.max() <= 1e-1 * 1.001


def test_check_bundle_missing_and_misshaped():
    b = init_random(SMALL, 0)
    short = TensorBundle({n: a for n, a in b.items() if n != "uma.b"})
    with pytest.raises(ShapeMismatchError, match="uma.b"):
        check_bundle(SMALL, short)
    bad = b.copy()
    bad.tensors["dec.out.w"] = np.zeros((3, 3), np.float32)
    with pytest.raises(ShapeMismatchError, match="dec.out.w"):
        check_bundle(SMALL, bad)


@pytest.mark.parametrize("D,E,N", [(256, 4, 16), (512, 2, 32)])
def test_block_param_count_near_3ED2(D, E, N):
    cfg = ModelConfig(model_dim=D, expansion=E, state_size=N, num_encoder_blocks=1,
                      num_decoder_blocks=1, decoder_heads=4, decoder_ff_dim=8, vocab_size=4,
                      subsample_channels=1, max_decoder_len=1)
    count = encoder_block_param_count(init_random(cfg, 0), 0)
    ED = E * D
    # in_proj + out_proj + conv + x_bcd + dt + a_log + skip + norm
    assert count == 3 * ED * D + 5 * ED + (2 * N + 1) * ED + 2 * ED + ED * N + ED + D
    assert abs(count - 3 * E * D * D) / (3 * E * D * D) <= 0.10


def test_config_text_roundtrip(tmp_path):
    cfg = ModelConfig.aishell1(et_enabled=True, lookahead_kernel=17)
    path = tmp_path / "m.cfg"
    path.write_text(cfg.to_text())
    assert ModelConfig.load(path) == cfg


@pytest.mark.parametrize("text", ["model_dim=abc", "nope=1", "model_dim", "lookahead_kernel=4",
                                  "model_dim=30\ndecoder_heads=4", "et_policy=replace"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        ModelConfig.from_text(text)


def test_config_comments_and_blank_lines():
    cfg = ModelConfig.from_text("# desk model\n\nmodel_dim = 32  # small\net_enabled=yes\n")
    assert cfg.model_dim == 32 and cfg.et_enabled
