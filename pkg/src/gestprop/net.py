"""Dual-encoder gesture-property classifier.

Each modality gets its own encoder: a stack of length-preserving dilated
1-D convolutions (dilation doubling per layer, ReLU + dropout after each),
a readout that turns the (B, T, C) activation into a window embedding, and
a linear projection. The default readout takes the activation at the center
time step, the position being predicted; mean-pooling over time is available
via EncoderSpec.reduce="mean". Embeddings from the active modalities (plus
an optional speaker one-hot) are concatenated and decoded by an MLP; the
head is a sigmoid per label for non-exclusive properties and gesture
presence, or a softmax across labels for the exclusive phase property.

Weights initialize uniform in [-a, a] with a = sqrt(6 / fan_in); biases
start at zero.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

AUDIO_CHANNELS = 5
AUDIO_FRAMES = 41          # +-20 frames = +-1 s at 20 fps
TEXT_SLOTS = 7
TEXT_DIM = 301             # 300-d embedding + timing offset

CHECKPOINT_MAGIC = b"GPROPCKPT1\n"


@dataclass(frozen=True)
class EncoderSpec:
    layers: int = 3
    channels: int = 24
    kernel: int = 3
    dropout: float = 0.0
    out_dim: int = 24
    reduce: str = "center"

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"encoder needs >= 1 layer, got {self.layers}")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.reduce not in ("center", "mean"):
            raise ValueError(f"reduce must be 'center' or 'mean', got {self.reduce!r}")


@dataclass(frozen=True)
class DecoderSpec:
    hidden: int = 48
    layers: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError(f"decoder layers must be >= 0, got {self.layers}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class ModelSpec:
    head: str
    n_labels: int
    audio: EncoderSpec | None = field(default_factory=EncoderSpec)
    text: EncoderSpec | None = field(default_factory=EncoderSpec)
    decoder: DecoderSpec = field(default_factory=DecoderSpec)
    audio_channels: int = AUDIO_CHANNELS
    audio_frames: int = AUDIO_FRAMES
    text_dim: int = TEXT_DIM
    text_slots: int = TEXT_SLOTS
    speaker_dim: int = 0

    def __post_init__(self):
        if self.head not in ("sigmoid", "softmax"):
            raise ValueError(f"head must be 'sigmoid' or 'softmax', got {self.head!r}")
        if self.n_labels < 1:
            raise ValueError(f"need >= 1 label, got {self.n_labels}")
        if self.audio is None and self.text is None:
            raise ValueError("at least one encoder must be active")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        for key, sub in (("audio", EncoderSpec), ("text", EncoderSpec)):
            if d.get(key) is not None:
                d[key] = sub(**d[key])
        d["decoder"] = DecoderSpec(**d["decoder"])
        return cls(**d)


class ModelParams:
    """Named parameter buffers; plain ndarrays between training steps."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = tensors

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: v.astype(dtype) for k, v in self.tensors.items()})


def _layer_dims(spec: ModelSpec):
    """Yield (name, shape, fan_in) for every parameter tensor in order."""
    dec_in = 0
    for prefix, enc, c_in in (("audio", spec.audio, spec.audio_channels),
                              ("text", spec.text, spec.text_dim)):
        if enc is None:
            continue
        for i in range(enc.layers):
            cin = c_in if i == 0 else enc.channels
            yield f"{prefix}.conv{i}.w", (enc.kernel, cin, enc.channels), enc.kernel * cin
            yield f"{prefix}.conv{i}.b", (enc.channels,), None
        yield f"{prefix}.proj.w", (enc.channels, enc.out_dim), enc.channels
        yield f"{prefix}.proj.b", (enc.out_dim,), None
        dec_in += enc.out_dim
    dec_in += spec.speaker_dim
    width = dec_in
    for i in range(spec.decoder.layers):
        yield f"dec.fc{i}.w", (width, spec.decoder.hidden), width
        yield f"dec.fc{i}.b", (spec.decoder.hidden,), None
        width = spec.decoder.hidden
    yield "head.w", (width, spec.n_labels), width
    yield "head.b", (spec.n_labels,), None


def init_params(spec: ModelSpec, seed: int, dtype=np.float32) -> ModelParams:
    """Uniform(-a, a) weights with a = sqrt(6 / fan_in); zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    tensors = {}
    for name, shape, fan_in in _layer_dims(spec):
        if fan_in is None:
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            a = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-a, a, size=shape).astype(dtype)
    return ModelParams(tensors)


def _encode(prefix: str, enc: EncoderSpec, x: Tensor, pt: dict[str, Tensor],
            training: bool, rng) -> Tensor:
    h = x
    for i in range(enc.layers):
        h = T.conv1d_dilated(h, pt[f"{prefix}.conv{i}.w"], pt[f"{prefix}.conv{i}.b"],
                             dilation=2 ** i)
        h = T.relu(h)
        h = T.dropout(h, enc.dropout, rng, training)
    if enc.reduce == "center":
        e = T.select_time(h, h.shape[1] // 2)
    else:
        e = T.tmean(h, axis=1)
    e = T.relu(T.add(T.matmul(e, pt[f"{prefix}.proj.w"]), pt[f"{prefix}.proj.b"]))
    return T.dropout(e, enc.dropout, rng, training)


def conv_stack(prefix: str, enc: EncoderSpec, x: Tensor,
               pt: dict[str, Tensor]) -> Tensor:
    """Pre-readout conv activations, exposed for equivariance checks."""
    h = x
    for i in range(enc.layers):
        h = T.relu(T.conv1d_dilated(h, pt[f"{prefix}.conv{i}.w"],
                                    pt[f"{prefix}.conv{i}.b"], dilation=2 ** i))
    return h


def forward(spec: ModelSpec, params: ModelParams,
            audio: np.ndarray | None = None,
            text: np.ndarray | None = None,
            speaker: np.ndarray | None = None,
            training: bool = False,
            rng: np.random.Generator | None = None) -> tuple[Tensor, dict[str, Tensor]]:
    """Class probabilities for a batch of windows.

    audio: (B, 41, 5); text: (B, 7, 301); speaker: (B, speaker_dim) one-hot.
    Returns (probs, param_tensors): probs is (B, n_labels), sigmoid per
    label or a softmax row depending on the head; param_tensors carry the
    gradients after probs-derived losses call backward().
    """
    pt = {name: Tensor(arr, requires_grad=True) for name, arr in params.tensors.items()}
    embeddings = []
    if spec.audio is not None:
        if audio is None:
            raise ValueError("model has an audio encoder but no audio windows given")
        a = np.asarray(audio)
        if a.shape[1:] != (spec.audio_frames, spec.audio_channels):
            raise ValueError(
                f"audio windows must be (B, {spec.audio_frames}, {spec.audio_channels}),"
                f" got {a.shape}")
        embeddings.append(_encode("audio", spec.audio, Tensor(a), pt, training, rng))
    if spec.text is not None:
        if text is None:
            raise ValueError("model has a text encoder but no text windows given")
        x = np.asarray(text)
        if x.shape[1:] != (spec.text_slots, spec.text_dim):
            raise ValueError(
                f"text windows must be (B, {spec.text_slots}, {spec.text_dim}),"
                f" got {x.shape}")
        embeddings.append(_encode("text", spec.text, Tensor(x), pt, training, rng))
    if spec.speaker_dim:
        if speaker is None:
            raise ValueError("model expects a speaker one-hot input")
        embeddings.append(Tensor(np.asarray(speaker)))

    h = embeddings[0] if len(embeddings) == 1 else T.concat(embeddings, axis=-1)
    for i in range(spec.decoder.layers):
        h = T.relu(T.add(T.matmul(h, pt[f"dec.fc{i}.w"]), pt[f"dec.fc{i}.b"]))
        h = T.dropout(h, spec.decoder.dropout, rng, training)
    logits = T.add(T.matmul(h, pt["head.w"]), pt["head.b"])
    probs = T.sigmoid(logits) if spec.head == "sigmoid" else T.softmax(logits, axis=-1)
    return probs, pt


def predict_probs(spec: ModelSpec, params: ModelParams,
                  audio: np.ndarray | None = None,
                  text: np.ndarray | None = None,
                  speaker: np.ndarray | None = None,
                  chunk: int = 1024) -> np.ndarray:
    """Inference-mode probabilities, computed in chunks."""
    n = len(audio) if audio is not None else len(text)
    outs = []
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        probs, _ = forward(
            spec, params,
            audio=audio[lo:hi] if audio is not None else None,
            text=text[lo:hi] if text is not None else None,
            speaker=speaker[lo:hi] if speaker is not None else None,
            training=False,
        )
        outs.append(probs.data)
    return np.concatenate(outs) if outs else np.zeros((0, spec.n_labels))


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(path: str | Path, spec: ModelSpec, params: ModelParams,
                    meta: dict | None = None) -> None:
    """Versioned binary checkpoint: JSON header + named little-endian buffers."""
    entries = [
        {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
        for name, arr in params.tensors.items()
    ]
    header = {
        "spec": spec.to_dict(),
        "meta": meta or {},
        "params": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, arr in params.tensors.items():
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[ModelSpec, ModelParams, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        tensors = {}
        for entry in header["params"]:
            dt = np.dtype(entry["dtype"]).newbyteorder("<")
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            buf = fh.read(count * dt.itemsize)
            if len(buf) != count * dt.itemsize:
                raise ValueError(f"{path}: truncated buffer for {entry['name']}")
            arr = np.frombuffer(buf, dtype=dt).reshape(entry["shape"])
            tensors[entry["name"]] = arr.astype(np.dtype(entry["dtype"]))
    spec = ModelSpec.from_dict(header["spec"])
    return spec, ModelParams(tensors), header.get("meta", {})


# ------------------------------------------------------------------ pipeline

@dataclass
class PipelinePrediction:
    presence_prob: float
    properties: dict[str, np.ndarray] | None


def predict_pipeline(exist: tuple[ModelSpec, ModelParams],
                     property_models: dict[str, tuple[ModelSpec, ModelParams]],
                     audio: np.ndarray | None,
                     text: np.ndarray | None,
                     speaker: np.ndarray | None = None,
                     threshold: float = 0.5) -> list[PipelinePrediction]:
    """Two-stage prediction: gesture presence gates the property models.

    Frames whose presence probability falls below the threshold get
    properties=None; the rest carry a probability vector per property.
    """
    e_spec, e_params = exist
    presence = predict_probs(e_spec, e_params, audio=audio, text=text,
                             speaker=speaker)[:, 0]
    n = len(presence)
    prop_probs = {}
    active = np.flatnonzero(presence >= threshold)
    for name, (spec, params) in property_models.items():
        probs = np.zeros((n, spec.n_labels))
        if len(active):
            probs[active] = predict_probs(
                spec, params,
                audio=audio[active] if audio is not None else None,
                text=text[active] if text is not None else None,
                speaker=speaker[active] if speaker is not None else None,
            )
        prop_probs[name] = probs
    out = []
    for i in range(n):
        if presence[i] >= threshold:
            out.append(PipelinePrediction(
                presence_prob=float(presence[i]),
                properties={k: v[i] for k, v in prop_probs.items()}))
        else:
            out.append(PipelinePrediction(presence_prob=float(presence[i]),
                                          properties=None))
    return out
