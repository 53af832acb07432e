"""Forward-only acoustic model: strided 2-D convolution, stacked GRUs, softmax.

Inference runs in float32. ``forward_full`` and ``forward_step`` share one code
path; the streaming state carries the spectrogram frames the convolution has
not yet consumed plus one hidden vector per recurrent layer.

GRU cell (reset applied before the recurrent matmul)::

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    n = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * n + z * h
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import Alphabet, CtcKwsError, PosteriorMatrix
from .features import Spectrogram

MODEL_MAGIC = b"KWSM"
MODEL_VERSION = 1
GATES = ("update", "reset", "candidate")


class ModelError(CtcKwsError):
    pass


class ModelFormatError(ModelError):
    pass


class TensorShapeError(ModelError):
    pass


class MissingTensorError(ModelError):
    pass


class InputShapeError(ModelError, ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    conv_filter_time: int = 11
    conv_filter_freq: int = 32
    conv_filters: int = 32
    conv_stride_time: int = 3
    conv_stride_freq: int = 3
    num_recurrent_layers: int = 3
    hidden_size: int = 256
    alphabet: Alphabet = field(default_factory=Alphabet.default)
    input_bins: int = 129

    def __post_init__(self):
        for name in (
            "conv_filter_time", "conv_filter_freq", "conv_filters", "conv_stride_time",
            "conv_stride_freq", "num_recurrent_layers", "hidden_size", "input_bins",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.conv_filter_freq > self.input_bins:
            raise ValueError("conv_filter_freq exceeds input_bins")

    @property
    def conv_out_freq(self) -> int:
        return (self.input_bins - self.conv_filter_freq) // self.conv_stride_freq + 1

    @property
    def recurrent_input_size(self) -> int:
        return self.conv_filters * self.conv_out_freq

    def output_frames(self, n_input: int) -> int:
        if n_input < self.conv_filter_time:
            return 0
        return (n_input - self.conv_filter_time) // self.conv_stride_time + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphabet"] = {
            "symbols": self.alphabet.to_string(),
            "blank_index": self.alphabet.blank_index,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        a = d.pop("alphabet")
        return cls(alphabet=Alphabet(tuple(a["symbols"]), a["blank_index"]), **d)


def tensor_shapes(c: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered manifest of every weight tensor the config requires."""
    shapes = {
        "conv.weight": (c.conv_filters, c.conv_filter_time, c.conv_filter_freq),
        "conv.bias": (c.conv_filters,),
    }
    n_in = c.recurrent_input_size
    for layer in range(c.num_recurrent_layers):
        for g in GATES:
            shapes[f"gru{layer}.{g}.input"] = (c.hidden_size, n_in)
            shapes[f"gru{layer}.{g}.recurrent"] = (c.hidden_size, c.hidden_size)
            shapes[f"gru{layer}.{g}.bias"] = (c.hidden_size,)
        n_in = c.hidden_size
    shapes["output.weight"] = (len(c.alphabet), c.hidden_size)
    shapes["output.bias"] = (len(c.alphabet),)
    return shapes


def param_count(c: ModelConfig) -> int:
    conv = c.conv_filters * c.conv_filter_time * c.conv_filter_freq + c.conv_filters
    rec = 0
    n_in = c.recurrent_input_size
    for _ in range(c.num_recurrent_layers):
        rec += 3 * (c.hidden_size * n_in + c.hidden_size * c.hidden_size + c.hidden_size)
        n_in = c.hidden_size
    out = len(c.alphabet) * c.hidden_size + len(c.alphabet)
    return conv + rec + out


def validate_weights(c: ModelConfig, weights: dict[str, np.ndarray]) -> None:
    expected = tensor_shapes(c)
    for name, shape in expected.items():
        if name not in weights:
            raise MissingTensorError(f"missing tensor {name!r}")
        if tuple(weights[name].shape) != shape:
            raise TensorShapeError(
                f"tensor {name!r} has shape {tuple(weights[name].shape)}, expected {shape}"
            )
    extra = sorted(set(weights) - set(expected))
    if extra:
        raise ModelFormatError(f"unexpected tensors: {', '.join(extra)}")


def init_random_model(c: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {
        name: rng.uniform(-0.1, 0.1, size=shape).astype(np.float32)
        for name, shape in tensor_shapes(c).items()
    }


@dataclass
class Model:
    config: ModelConfig
    weights: dict[str, np.ndarray]

    def __post_init__(self):
        self.weights = {k: np.asarray(v, dtype=np.float32) for k, v in self.weights.items()}
        validate_weights(self.config, self.weights)
        c = self.config
        # Kernel flattened to (time*freq, filters) for the im2col matmul.
        self._kernel = self.weights["conv.weight"].reshape(c.conv_filters, -1).T.copy()
        self._layers = []
        for layer in range(c.num_recurrent_layers):
            w_in = np.concatenate(
                [self.weights[f"gru{layer}.{g}.input"] for g in GATES], axis=0
            ).T.copy()
            bias = np.concatenate([self.weights[f"gru{layer}.{g}.bias"] for g in GATES])
            u_zr = np.concatenate(
                [self.weights[f"gru{layer}.{g}.recurrent"] for g in GATES[:2]], axis=0
            ).T.copy()
            u_h = self.weights[f"gru{layer}.candidate.recurrent"].T.copy()
            self._layers.append((w_in, bias, u_zr, u_h))

    @classmethod
    def random(cls, config: ModelConfig, seed: int = 0) -> Model:
        return cls(config, init_random_model(config, seed))


@dataclass
class RecurrentState:
    hidden: list[np.ndarray]
    pending: np.ndarray
    config: ModelConfig

    @classmethod
    def fresh(cls, c: ModelConfig) -> RecurrentState:
        return cls(
            [np.zeros(c.hidden_size, dtype=np.float32) for _ in range(c.num_recurrent_layers)],
            np.zeros((0, c.input_bins), dtype=np.float32),
            c,
        )


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _conv(model: Model, frames: np.ndarray) -> np.ndarray:
    """Valid strided convolution + ReLU; returns (T_out, filters * F_out)."""
    c = model.config
    n_out = c.output_frames(frames.shape[0])
    if n_out == 0:
        return np.zeros((0, c.recurrent_input_size), dtype=np.float32)
    t_idx = (np.arange(n_out) * c.conv_stride_time)[:, None] + np.arange(c.conv_filter_time)
    f_idx = (np.arange(c.conv_out_freq) * c.conv_stride_freq)[:, None] + np.arange(c.conv_filter_freq)
    # patches[t, f, i, j] = frames[t_idx[t, i], f_idx[f, j]]
    patches = frames[t_idx[:, None, :, None], f_idx[None, :, None, :]]
    patches = patches.reshape(n_out, c.conv_out_freq, -1)
    out = patches @ model._kernel + model.weights["conv.bias"]
    np.maximum(out, 0.0, out=out)
    # filter-major flatten: (T, filters, F_out)
    return out.transpose(0, 2, 1).reshape(n_out, -1)


def _gru_layer(x: np.ndarray, h: np.ndarray, params) -> tuple[np.ndarray, np.ndarray]:
    w_in, bias, u_zr, u_h = params
    size = h.shape[0]
    proj = x @ w_in + bias
    out = np.empty((x.shape[0], size), dtype=np.float32)
    for t in range(x.shape[0]):
        zr = _sigmoid(proj[t, : 2 * size] + h @ u_zr)
        z, r = zr[:size], zr[size:]
        n = np.tanh(proj[t, 2 * size:] + (r * h) @ u_h)
        h = (1.0 - z) * n + z * h
        out[t] = h
    return out, h


def forward_step(
    chunk: np.ndarray, state: RecurrentState, model: Model
) -> tuple[np.ndarray, RecurrentState]:
    """Feed spectrogram frames; return new posterior rows and the next state."""
    c = model.config
    if state.config != c:
        raise ModelError("recurrent state was created for a different model config")
    chunk = np.asarray(chunk, dtype=np.float32)
    if chunk.size == 0:
        chunk = chunk.reshape(0, c.input_bins)
    elif chunk.ndim != 2 or chunk.shape[1] != c.input_bins:
        raise InputShapeError(f"chunk rows must have {c.input_bins} bins, got shape {chunk.shape}")
    frames = np.concatenate([state.pending, chunk])
    x = _conv(model, frames)
    n_out = x.shape[0]
    if n_out == 0:
        return np.zeros((0, len(c.alphabet)), dtype=np.float32), RecurrentState(
            list(state.hidden), frames, c
        )
    hidden = []
    for params, h in zip(model._layers, state.hidden):
        x, h = _gru_layer(x, h, params)
        hidden.append(h)
    logits = x @ model.weights["output.weight"].T + model.weights["output.bias"]
    rows = _softmax(logits)
    pending = frames[n_out * c.conv_stride_time:]
    return rows, RecurrentState(hidden, pending, c)


def forward_full(spec: Spectrogram, model: Model) -> PosteriorMatrix:
    c = model.config
    if spec.num_bins != c.input_bins:
        raise InputShapeError(f"spectrogram has {spec.num_bins} bins, model expects {c.input_bins}")
    if spec.num_frames < c.conv_filter_time:
        raise InputShapeError(
            f"need at least {c.conv_filter_time} spectrogram frames, got {spec.num_frames}"
        )
    rows, _ = forward_step(spec.frames, RecurrentState.fresh(c), model)
    return PosteriorMatrix(
        rows.astype(np.float64), c.alphabet, spec.frame_hop * c.conv_stride_time
    )


# Model file layout (little-endian):
#   "KWSM" | u32 version | u32 header length | utf-8 JSON header | float32 tensors
# The header holds {"config": ..., "tensors": [[name, [dims...]], ...]} and the
# payloads follow in manifest order, row-major.


def save_model(model: Model, path: str | Path) -> None:
    manifest = [[name, list(arr.shape)] for name, arr in model.weights.items()]
    header = json.dumps({"config": model.config.to_dict(), "tensors": manifest}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(header)))
        fh.write(header)
        for arr in model.weights.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(path: str | Path) -> Model:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    if len(data) < 12:
        raise ModelFormatError(f"{path}: truncated header")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported model file version {version}")
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: bad header: {exc}") from exc
    off = 12 + header_len
    weights = {}
    for name, dims in manifest:
        n = int(np.prod(dims, dtype=np.int64))
        if off + 4 * n > len(data):
            raise ModelFormatError(f"{path}: payload truncated in tensor {name!r}")
        weights[name] = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(dims).copy()
        off += 4 * n
    if off != len(data):
        raise ModelFormatError(f"{path}: {len(data) - off} trailing bytes after tensors")
    return Model(config, weights)
