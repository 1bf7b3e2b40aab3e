"""MicroCrackAttentionNeXt: temporal encoder, 9x9 spatial fold, transposed-conv decoder.

The network is a flat, ordered list of layers. A layer's position in that
list is its id, which stays stable for a given config and is what taps and
MDA refer to.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from . import tensor as T
from .tensor import ShapeError, Tensor

CKPT_MAGIC = b"MCAN-CKPT"
CKPT_VERSION = 1
FULL_TEMPORAL_LEN = 2000


@dataclass
class ModelConfig:
    activation: str = "gelu"
    elu_alpha: float = 1.0
    se_reduction: int = 4
    norm_groups: int = 4
    input_channels: int = 2
    temporal_len: int = FULL_TEMPORAL_LEN
    sensors: int = 81
    channel_schedule: list = field(default_factory=lambda: [16, 32, 64, 128])
    decoder_channels: tuple = (16, 8, 8)
    scale_factor: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.scale_factor != 1.0:
            self.temporal_len = int(round(FULL_TEMPORAL_LEN * self.scale_factor))
            self.scale_factor = 1.0
        self.channel_schedule = list(self.channel_schedule)
        self.decoder_channels = tuple(self.decoder_channels)
        self.kind  # validates the tag
        side = int(round(self.sensors ** 0.5))
        if side * side != self.sensors:
            raise ValueError(f"sensors={self.sensors} is not a square grid")
        if self.temporal_schedule[-1] < 1:
            raise ValueError(f"temporal_len={self.temporal_len} pools below one step: {self.temporal_schedule}")
        for c in self.channel_schedule:
            if c % self.norm_groups:
                raise ValueError(f"norm_groups={self.norm_groups} does not divide {c} channels")
            if c % self.se_reduction:
                raise ValueError(f"se_reduction={self.se_reduction} does not divide {c} channels")

    @classmethod
    def micro(cls, **kw):
        """Temporal axis shrunk to 80 steps (pool trace 20, 10, 5, 2, 1); spatial path unchanged."""
        kw.setdefault("temporal_len", 80)
        return cls(**kw)

    @property
    def kind(self):
        return L.ActivationKind(self.activation, self.elu_alpha)

    @property
    def temporal_schedule(self):
        t = [self.temporal_len // 4]
        for _ in self.channel_schedule:
            t.append(t[-1] // 2)
        return t

    @property
    def grid_side(self):
        return int(round(self.sensors ** 0.5))

    @property
    def output_side(self):
        return self.grid_side * 4

    @property
    def output_len(self):
        return self.output_side ** 2

    @property
    def bottleneck_kernel(self):
        return (self.temporal_schedule[-1], 1)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["decoder_channels"] = list(self.decoder_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def expected_trace(self, batch=1):
        """Shapes at the 13 stage boundaries, input first."""
        tt = self.temporal_schedule
        chs = self.channel_schedule
        g, o = self.grid_side, self.output_side
        d0, d1, d2 = self.decoder_channels
        trace = [(batch, self.input_channels, self.temporal_len, self.sensors),
                 (batch, self.input_channels, tt[0], self.sensors)]
        for c, t in zip(chs, tt[1:]):
            trace.append((batch, c, t, self.sensors))
        trace += [(batch, chs[-1], 1, self.sensors), (batch, chs[-1], g, g), (batch, d0, g, g),
                  (batch, d1, 2 * g, 2 * g), (batch, d2, o, o), (batch, 1, o, o), (batch, o * o)]
        return trace


STAGES = ("input", "pool0", "enc1", "enc2", "enc3", "enc4", "bottleneck", "fold",
          "pointwise", "up1", "up2", "head", "flatten")


class Model:
    def __init__(self, config, layers, stage_ends):
        self.config = config
        self.layers = layers
        self.stage_ends = stage_ends  # layer id -> stage name

    # registry ----------------------------------------------------------

    def named_params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for k, p in layer.params.items():
                out[f"{i}.{layer.name}.{k}"] = p
        return out

    def named_buffers(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for k, b in layer.buffers.items():
                out[f"{i}.{layer.name}.{k}"] = b
        return out

    def parameters(self):
        return list(self.named_params().values())

    def parameter_count(self):
        return int(sum(p.size for p in self.parameters()))

    def layer_ids(self):
        return {i: f"{layer.name}" for i, layer in enumerate(self.layers)}

    @property
    def head_id(self):
        """Id of the last layer before the sigmoid."""
        return next(i for i, layer in enumerate(self.layers) if isinstance(layer, L.Sigmoid)) - 1

    @property
    def bottleneck_id(self):
        return next(i for i, s in self.stage_ends.items() if s == "bottleneck")

    def summary(self):
        lines = []
        shape = (1, self.config.input_channels, self.config.temporal_len, self.config.sensors)
        for i, layer in enumerate(self.layers):
            shape = layer.out_shape(shape)
            n = sum(p.size for p in layer.params.values())
            stage = self.stage_ends.get(i, "")
            lines.append(f"{i:3d}  {layer!r:<48s} {str(shape):<22s} {n:>9d}  {stage}")
        lines.append(f"total parameters: {self.parameter_count()}")
        return "\n".join(lines)

    # forward -----------------------------------------------------------

    def _run(self, x, train, taps=None):
        cfg = self.config
        x = T.as_tensor(x)
        expected = cfg.expected_trace(x.shape[0])
        actual = [x.shape]
        if x.shape != expected[0]:
            raise ShapeError(f"model input {x.shape}, expected {expected[0]}")
        stage = 1
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, train)
            if taps is not None and i in taps:
                taps[i] = x.data.reshape(x.shape[0], -1).copy()
            if i in self.stage_ends:
                actual.append(x.shape)
                if x.shape != expected[stage]:
                    raise ShapeError(
                        "shape trace diverged at stage "
                        f"{STAGES[stage]}:\n expected {expected[:stage + 1]}\n actual   {actual}")
                stage += 1
        return x

    def forward(self, x, train=False):
        return self._run(x, train)

    __call__ = forward

    def trace(self, x):
        """Actual shapes at every stage boundary (eval mode)."""
        shapes = [T.as_tensor(x).shape]
        with T.no_grad():
            h = T.as_tensor(x)
            for i, layer in enumerate(self.layers):
                h = layer.forward(h, False)
                if i in self.stage_ends:
                    shapes.append(h.shape)
        return shapes

    def predict(self, x, batch_size=16):
        """Eval-mode probabilities, shape (N, output_len)."""
        x = np.asarray(x, dtype=np.float64)
        out = []
        with T.no_grad():
            for s in range(0, len(x), batch_size):
                out.append(self._run(x[s:s + batch_size], False).data)
        return np.concatenate(out, axis=0)

    def forward_with_taps(self, x, tap_layer_ids):
        """Eval-mode output plus flattened activations at the requested layer ids."""
        bad = [i for i in tap_layer_ids if not 0 <= i < len(self.layers)]
        if bad:
            raise KeyError(f"unknown layer ids {bad}; valid range 0..{len(self.layers) - 1}")
        taps = {i: None for i in tap_layer_ids}
        with T.no_grad():
            out = self._run(x, False, taps)
        return out.data, taps


def build(config=None):
    """Assemble the network for ``config`` and check its static shape trace."""
    cfg = config or ModelConfig()
    rng = np.random.default_rng(cfg.seed)
    kind = cfg.kind
    layers, ends = [], {}

    def add(layer, stage=None):
        layers.append(layer)
        if stage:
            ends[len(layers) - 1] = stage

    add(L.MaxPool((4, 1)), "pool0")
    c_in = cfg.input_channels
    for b, c in enumerate(cfg.channel_schedule, start=1):
        add(L.Conv2d(rng, c_in, c, (3, 1), padding=(1, 0), bias=False))
        add(L.BatchNorm2d(c))
        add(L.Activation(kind))
        add(L.Conv2d(rng, c, c, (3, 1), padding=(1, 0), bias=False))
        add(L.BatchNorm2d(c))
        add(L.Activation(kind))
        add(L.SqueezeExcite(rng, c, cfg.se_reduction, kind))
        add(L.MaxPool((2, 1)))
        add(L.GroupNorm(c, cfg.norm_groups))
        add(L.TemporalAttention(rng, c), f"enc{b}")
        c_in = c
    add(L.Conv2d(rng, c_in, c_in, cfg.bottleneck_kernel, bias=False))
    add(L.BatchNorm2d(c_in))
    add(L.Activation(kind), "bottleneck")
    g = cfg.grid_side
    add(L.Reshape((c_in, g, g)), "fold")
    d0, d1, d2 = cfg.decoder_channels
    add(L.Conv2d(rng, c_in, d0, (1, 1)), "pointwise")
    add(L.ConvTranspose2d(rng, d0, d1, bias=False))
    add(L.BatchNorm2d(d1), "up1")
    add(L.ConvTranspose2d(rng, d1, d2, bias=False))
    add(L.BatchNorm2d(d2), "up2")
    add(L.Conv2d(rng, d2, 1, (1, 1)))
    add(L.Sigmoid(), "head")
    add(L.Flatten(), "flatten")

    model = Model(cfg, layers, ends)
    expected = cfg.expected_trace(1)
    shape, static = expected[0], [expected[0]]
    for i, layer in enumerate(layers):
        shape = layer.out_shape(shape)
        if i in ends:
            static.append(shape)
    if static != expected:
        raise ShapeError(f"static shape trace mismatch:\n expected {expected}\n actual   {static}")
    return model


# ------------------------------------------------------------ checkpoints

def save_checkpoint(model, path):
    """Write parameters and buffers as named little-endian float64 arrays."""
    path = Path(path)
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    arrays = {k: p.data for k, p in model.named_params().items()}
    arrays.update(model.named_buffers())
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(cfg)), cfg, struct.pack("<I", len(arrays))]
    for name, a in arrays.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    try:
        path.write_bytes(b"".join(chunks))
    except OSError as e:
        raise OSError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise OSError(f"cannot read checkpoint {path}: {e}") from e
    if not blob.startswith(CKPT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    pos = len(CKPT_MAGIC)
    version, n = struct.unpack_from("<II", blob, pos)
    pos += 8
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    cfg = ModelConfig.from_dict(json.loads(blob[pos:pos + n].decode("utf-8")))
    pos += n
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    model = build(cfg)
    for i, layer in enumerate(model.layers):
        for k in layer.params:
            layer.params[k].data = arrays[f"{i}.{layer.name}.{k}"]
        for k in layer.buffers:
            layer.buffers[k] = arrays[f"{i}.{layer.name}.{k}"]
    return model
