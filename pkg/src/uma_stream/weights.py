"""Model configuration, the ``.umaw`` tensor bundle format and random init.

The bundle layout on disk (all integers little-endian u32)::

    b"UMAW" | version | tensor count
    per tensor: name length | UTF-8 name | rank | dims... | float32 data
"""

from __future__ import annotations

import dataclasses
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

MAGIC = b"UMAW"
FORMAT_VERSION = 1
BLANK_ID = 0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the streaming recognizer.

    The defaults are a desk-scale model; :meth:`aishell1` and :meth:`aishell2`
    return the published dimensions (encoder depth for the UMA variant).
    """

    feat_dim: int = 80
    model_dim: int = 64
    expansion: int = 2
    state_size: int = 16
    num_encoder_blocks: int = 4
    lookahead_kernel: int = 1
    num_decoder_blocks: int = 2
    decoder_heads: int = 4
    decoder_ff_dim: int = 256
    vocab_size: int = 32
    frame_shift_ms: int = 32
    et_enabled: bool = False
    # not fixed by the model description; exposed so they can be varied
    subsample_channels: int = 32
    lookahead_depthwise: bool = True
    et_policy: str = "commit"
    max_decoder_len: int = 2048

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        k = self.lookahead_kernel
        if k < 1 or k % 2 == 0:
            raise ConfigError(f"lookahead_kernel must be odd and >= 1, got {k}")
        for name in (
            "feat_dim", "model_dim", "expansion", "state_size", "num_encoder_blocks",
            "num_decoder_blocks", "decoder_heads", "decoder_ff_dim", "vocab_size",
            "frame_shift_ms", "subsample_channels", "max_decoder_len",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.vocab_size <= BLANK_ID + 1:
            raise ConfigError("vocab_size must leave room for at least one non-blank token")
        if self.model_dim % self.decoder_heads:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by decoder_heads {self.decoder_heads}"
            )
        if self.feat_dim < 7:
            raise ConfigError("feat_dim too small for two stride-2 3x3 convolutions")
        if self.et_policy not in ("commit", "rollback", "peak_final"):
            raise ConfigError(f"unknown et_policy {self.et_policy!r}")

    @property
    def inner_dim(self) -> int:
        return self.expansion * self.model_dim

    @property
    def lookahead_frames(self) -> int:
        return (self.lookahead_kernel - 1) // 2

    @property
    def subsampled_freq(self) -> int:
        f1 = (self.feat_dim - 3) // 2 + 1
        return (f1 - 3) // 2 + 1

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def aishell1(cls, **overrides) -> "ModelConfig":
        base = dict(
            model_dim=256, expansion=4, state_size=16, num_encoder_blocks=36,
            num_decoder_blocks=6, decoder_heads=4, decoder_ff_dim=2048, vocab_size=4233,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def aishell2(cls, **overrides) -> "ModelConfig":
        base = dict(
            model_dim=512, expansion=2, state_size=32, num_encoder_blocks=36,
            num_decoder_blocks=6, decoder_heads=8, decoder_ff_dim=2048, vocab_size=5212,
        )
        base.update(overrides)
        return cls(**base)

    # key=value text files

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            values[key] = _parse_value(types[key], value, key)
        return cls(**values)

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _parse_value(kind: str, value: str, key: str):
    try:
        if kind == "bool":
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            return int(value)
        return value
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


# --- tensor bundle ------------------------------------------------------------


class WeightFormatError(ValueError):
    """Base class of every malformed-bundle error."""

    def __init__(self, message: str, tensor: str | None = None):
        self.tensor = tensor
        super().__init__(message if tensor is None else f"{message} (tensor {tensor!r})")


class BadMagicError(WeightFormatError):
    pass


class UnsupportedVersionError(WeightFormatError):
    pass


class TruncatedStreamError(WeightFormatError):
    pass


class ShapeMismatchError(WeightFormatError):
    pass


class DuplicateTensorError(WeightFormatError):
    pass


class TrailingBytesError(WeightFormatError):
    pass


@dataclass
class TensorBundle:
    """Ordered name -> float32 array mapping.

    Equality is bit-exact: same names in the same order, same shapes and the
    same raw bytes (so NaN payloads compare equal to themselves).
    """

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, data, shape: tuple[int, ...] | None = None) -> None:
        if name in self.tensors:
            raise DuplicateTensorError("duplicate tensor name", name)
        arr = np.asarray(data, dtype=np.float32)
        if shape is not None:
            shape = tuple(int(d) for d in shape)
            if arr.size != math.prod(shape):
                raise ShapeMismatchError(
                    f"data length {arr.size} does not match shape {shape}", name
                )
            arr = arr.reshape(shape)
        self.tensors[name] = np.ascontiguousarray(arr)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise KeyError(f"bundle has no tensor {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorBundle):
            return NotImplemented
        if list(self.tensors) != list(other.tensors):
            return False
        for name, a in self.tensors.items():
            b = other.tensors[name]
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return True

    def num_params(self, prefix: str = "") -> int:
        return sum(a.size for n, a in self.tensors.items() if n.startswith(prefix))

    def copy(self) -> "TensorBundle":
        return TensorBundle({n: a.copy() for n, a in self.tensors.items()})


def save_bundle(bundle: TensorBundle, sink: BinaryIO) -> int:
    """Write ``bundle`` to a binary stream and return the number of bytes written."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", FORMAT_VERSION, len(bundle)))
    for name, arr in bundle.items():
        encoded = name.encode("utf-8")
        out.write(struct.pack("<I", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<I", arr.ndim))
        if arr.ndim:
            out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = out.getvalue()
    sink.write(payload)
    return len(payload)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str, tensor: str | None = None) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedStreamError(f"stream ended while reading {what}", tensor)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str, tensor: str | None = None) -> int:
        return struct.unpack("<I", self.take(4, what, tensor))[0]


def load_bundle(source: BinaryIO) -> TensorBundle:
    data = source.read()
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("format version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    count = r.u32("tensor count")
    bundle = TensorBundle()
    previous = None
    for index in range(count):
        # until the name is read, errors point at the last complete tensor
        where = previous if previous is not None else f"#{index}"
        name_len = r.u32("name length", where)
        try:
            name = r.take(name_len, "tensor name", where).decode("utf-8")
        except UnicodeDecodeError:
            raise WeightFormatError("tensor name is not valid UTF-8", f"#{index}") from None
        rank = r.u32("rank", name)
        dims = [r.u32("dimension", name) for _ in range(rank)]
        n = math.prod(dims)
        raw = r.take(4 * n, "tensor data", name)
        bundle.add(name, np.frombuffer(raw, dtype="<f4").astype(np.float32), shape=tuple(dims))
        previous = name
    if r.pos != len(data):
        raise TrailingBytesError(f"{len(data) - r.pos} unexpected bytes after last tensor")
    return bundle


def save_bundle_file(bundle: TensorBundle, path: str | Path) -> int:
    with open(path, "wb") as fh:
        return save_bundle(bundle, fh)


def load_bundle_file(path: str | Path) -> TensorBundle:
    with open(path, "rb") as fh:
        return load_bundle(fh)


# --- random initialization ------------------------------------------------------


def sinusoidal_table(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : dim // 2])
    return table


def tensor_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str, int]]:
    """``(name, shape, init kind, fan_in)`` for every tensor the pipeline reads."""
    c = config
    D, ED, N = c.model_dim, c.inner_dim, c.state_size
    C1, C2, F2 = c.subsample_channels, D, c.subsampled_freq
    k, F = c.lookahead_kernel, c.decoder_ff_dim
    out = [
        ("fe.conv1.w", (C1, 1, 3, 3), "uniform", 9),
        ("fe.conv1.b", (C1,), "uniform", 9),
        ("fe.conv2.w", (C2, C1, 3, 3), "uniform", 9 * C1),
        ("fe.conv2.b", (C2,), "uniform", 9 * C1),
        ("fe.proj.w", (D, C2 * F2), "uniform", C2 * F2),
        ("fe.proj.b", (D,), "uniform", C2 * F2),
    ]
    for i in range(c.num_encoder_blocks):
        p = f"enc.{i}."
        out += [
            (p + "norm.g", (D,), "ones", 0),
            (p + "in_proj.w", (2 * ED, D), "uniform", D),
            (p + "conv.w", (ED, 4), "uniform", 4),
            (p + "conv.b", (ED,), "uniform", 4),
            (p + "x_bcd.w", (2 * N + 1, ED), "uniform", ED),
            (p + "dt.w", (ED,), "uniform", 1),
            (p + "dt.b", (ED,), "dt_bias", 0),
            (p + "a_log", (ED, N), "a_log", 0),
            (p + "skip_d", (ED,), "ones", 0),
            (p + "out_proj.w", (D, ED), "uniform", ED),
        ]
    if c.lookahead_depthwise:
        out += [("la.conv.w", (D, k), "uniform", k), ("la.conv.b", (D,), "uniform", k)]
    else:
        out += [("la.conv.w", (D, D, k), "uniform", D * k), ("la.conv.b", (D,), "uniform", D * k)]
    out += [
        ("la.norm.g", (D,), "ones", 0),
        ("la.norm.b", (D,), "zeros", 0),
        ("uma.w", (D,), "uniform", D),
        ("uma.b", (1,), "uniform", D),
    ]
    for i in range(c.num_decoder_blocks):
        p = f"dec.{i}."
        out.append((p + "norm1.g", (D,), "ones", 0))
        out += [(p + f"attn.{q}.w", (D, D), "uniform", D) for q in "qkvo"]
        out += [
            (p + "norm2.g", (D,), "ones", 0),
            (p + "ff.w1", (F, D), "uniform", D),
            (p + "ff.w2", (D, F), "uniform", F),
        ]
    out += [
        ("dec.norm.g", (D,), "ones", 0),
        ("dec.out.w", (c.vocab_size, D), "uniform", D),
        ("dec.out.b", (c.vocab_size,), "uniform", D),
        ("dec.posenc", (c.max_decoder_len, D), "posenc", 0),
    ]
    return out


def init_random(config: ModelConfig, seed: int) -> TensorBundle:
    """Deterministic random weights for ``config``.

    Weights and biases are uniform in +-1/sqrt(fan_in). Norm gains start at 1,
    ``a_log`` at log(1..N) so A = -(1..N), and the step-size bias at the
    inverse softplus of a log-uniform draw in [1e-3, 1e-1]. Every discretized
    coefficient exp(delta * A) therefore lies strictly inside (0, 1).
    """
    rng = np.random.default_rng(seed)
    bundle = TensorBundle()
    for name, shape, kind, fan_in in tensor_layout(config):
        if kind == "uniform":
            bound = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif kind == "ones":
            data = np.ones(shape)
        elif kind == "zeros":
            data = np.zeros(shape)
        elif kind == "dt_bias":
            dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=shape))
            data = dt + np.log(-np.expm1(-dt))
        elif kind == "a_log":
            data = np.broadcast_to(np.log(np.arange(1, shape[1] + 1, dtype=np.float64)), shape)
        elif kind == "posenc":
            data = sinusoidal_table(*shape)
        else:  # pragma: no cover
            raise AssertionError(kind)
        bundle.add(name, data)
    return bundle


def encoder_block_param_count(bundle: TensorBundle, index: int) -> int:
    return bundle.num_params(f"enc.{index}.")


def check_bundle(config: ModelConfig, bundle: TensorBundle) -> None:
    """Raise :class:`ShapeMismatchError` if ``bundle`` does not fit ``config``."""
    for name, shape, _, _ in tensor_layout(config):
        if name not in bundle:
            raise ShapeMismatchError("missing tensor required by config", name)
        if bundle[name].shape != shape:
            raise ShapeMismatchError(
                f"shape {bundle[name].shape} does not match config shape {shape}", name
            )
