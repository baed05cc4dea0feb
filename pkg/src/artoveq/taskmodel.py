"""Dense encoder/decoder pair for classification over a quantized bottleneck."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .gradcore import Tensor, default_dtype
from .vq import FeatureBlock

NONLINEARITIES = {
    "relu": gc.relu,
    "leaky_relu": gc.leaky_relu,
}


@dataclass
class EncoderSpec:
    input_dim: int
    num_segments: int
    dim: int
    hidden: list[int] = field(default_factory=lambda: [64, 32])
    nonlinearity: str = "leaky_relu"

    @property
    def output_dim(self) -> int:
        return self.num_segments * self.dim

    def widths(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]


@dataclass
class DecoderSpec:
    input_dim: int
    num_classes: int
    hidden: list[int] = field(default_factory=lambda: [64])
    nonlinearity: str = "leaky_relu"

    def widths(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.num_classes]


@dataclass
class LabeledSample:
    x: np.ndarray
    y: int


@dataclass
class Prediction:
    logits: np.ndarray
    label: int = field(init=False)

    def __post_init__(self):
        self.label = int(np.argmax(self.logits))


class MLP:
    """Stack of affine layers with a shared nonlinearity between them."""

    def __init__(self, widths: list[int], nonlinearity: str, rng: np.random.Generator):
        if nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {nonlinearity!r}")
        self.widths = list(widths)
        self.nonlinearity = nonlinearity
        self.layers: list[tuple[Tensor, Tensor]] = []
        dtype = default_dtype()
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
            b = np.zeros(fan_out, dtype=dtype)
            self.layers.append((Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)))

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer]

    def __call__(self, x) -> Tensor:
        act = NONLINEARITIES[self.nonlinearity]
        h = gc.as_tensor(x)
        if h.shape[-1] != self.widths[0]:
            raise gc.ShapeError(f"expected input width {self.widths[0]}, got {h.shape[-1]}")
        for i, (w, b) in enumerate(self.layers):
            h = gc.add(gc.matmul(h, w), b)
            if i < len(self.layers) - 1:
                h = act(h)
        return h


class TaskModel:
    """Encoder ``f_e`` and decoder ``f_d`` sharing one parameter namespace."""

    def __init__(self, enc: EncoderSpec, dec: DecoderSpec, seed: int = 0):
        if dec.input_dim != enc.output_dim:
            raise ValueError(f"decoder input {dec.input_dim} != encoder output {enc.output_dim}")
        self.enc_spec = enc
        self.dec_spec = dec
        rng = np.random.default_rng(seed)
        self.encoder = MLP(enc.widths(), enc.nonlinearity, rng)
        self.decoder = MLP(dec.widths(), dec.nonlinearity, rng)

    @classmethod
    def build(cls, input_dim: int, num_classes: int, num_segments: int, dim: int, seed: int = 0, **kw):
        enc = EncoderSpec(input_dim, num_segments, dim, **kw.get("encoder", {}))
        dec = DecoderSpec(enc.output_dim, num_classes, **kw.get("decoder", {}))
        return cls(enc, dec, seed)

    @property
    def num_segments(self) -> int:
        return self.enc_spec.num_segments

    @property
    def dim(self) -> int:
        return self.enc_spec.dim

    @property
    def num_classes(self) -> int:
        return self.dec_spec.num_classes

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.decoder.parameters()

    def encode(self, x) -> FeatureBlock:
        x = np.atleast_2d(np.asarray(x, dtype=default_dtype()))
        return FeatureBlock(self.encoder(Tensor(x)), self.dim)

    def decode_logits(self, z) -> Tensor:
        z = gc.as_tensor(z)
        if z.data.ndim == 1:
            z = gc.reshape(z, (1, -1))
        return self.decoder(z)

    def decode(self, z) -> list[Prediction]:
        logits = self.decode_logits(z).data
        return [Prediction(row) for row in logits]

    def forward_unquantized(self, x) -> Tensor:
        return self.decode_logits(self.encode(x).source)

    def warmstart_loss(self, x, y) -> Tensor:
        y = np.asarray(y)
        if y.size == 0:
            raise ValueError("empty batch")
        return gc.cross_entropy(self.forward_unquantized(x), y)

    # -- checkpoints ---------------------------------------------------------

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, arrays: list[np.ndarray]):
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError(f"checkpoint has {len(arrays)} tensors, model has {len(params)}")
        for p, a in zip(params, arrays):
            if p.shape != np.shape(a):
                raise ValueError(f"checkpoint tensor shape {np.shape(a)} != {p.shape}")
            p.data[...] = a

    def dumps(self) -> str:
        names = [f"{part}.{i}.{kind}" for part, mlp in (("encoder", self.encoder), ("decoder", self.decoder))
                 for i in range(len(mlp.layers)) for kind in ("weight", "bias")]
        doc = {
            "format_version": 1,
            "encoder": {"widths": self.encoder.widths, "nonlinearity": self.encoder.nonlinearity,
                        "num_segments": self.num_segments, "dim": self.dim},
            "decoder": {"widths": self.decoder.widths, "nonlinearity": self.decoder.nonlinearity},
            "layers": [
                {"name": n, "shape": list(p.shape),
                 "values": [float(f"{v:.9g}") for v in p.data.astype(np.float32).ravel()]}
                for n, p in zip(names, self.parameters())
            ],
        }
        return json.dumps(doc)

    @classmethod
    def loads(cls, text: str) -> "TaskModel":
        doc = json.loads(text)
        if doc.get("format_version") != 1:
            raise ValueError("unsupported checkpoint format_version")
        e, d = doc["encoder"], doc["decoder"]
        enc = EncoderSpec(e["widths"][0], e["num_segments"], e["dim"], e["widths"][1:-1], e["nonlinearity"])
        dec = DecoderSpec(d["widths"][0], d["widths"][-1], d["widths"][1:-1], d["nonlinearity"])
        model = cls(enc, dec)
        model.load_state([np.asarray(layer["values"], dtype=np.float32).reshape(layer["shape"])
                          for layer in doc["layers"]])
        return model
