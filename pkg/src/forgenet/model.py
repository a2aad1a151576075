"""U-Net model builders, full-image prediction, fusion, and checkpoints.

Both architecture variants share the same topology: four encoder stages of
[block, block, scSE, maxpool], a bottleneck [block, block, scSE], four
decoder stages of [transpose-conv upsample, skip concat, block, block,
scSE], and a 1x1 sigmoid head producing a per-pixel probability. "m1" uses
3x3 blocks throughout; "m2" swaps four filters of every block to 5x5.

Arbitrary-size images are handled by pre-scaling: resize to the network
input size, run once, resize the probability mask back. ``predict_tiled``
is the slide-a-window alternative kept for timing comparisons.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import imaging
from . import tensor as T
from .errors import ConfigError, FormatError, ShapeError
from .layers import ConvBlock, ConvBlockSpec, ScseBlock, ScseSpec
from .tensor import GradTape, Parameter, Tensor
from .validation import check_prob_mask, check_rgb8

CHECKPOINT_MAGIC = b"DFNW"
CHECKPOINT_VERSION = 1

DEFAULT_WIDTHS = (16, 32, 64, 128, 256)


@dataclass
class ArchConfig:
    arch: str = "m1"
    input_size: int = 256
    stage_widths: tuple = DEFAULT_WIDTHS
    scse: ScseSpec = field(default_factory=ScseSpec)
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ("m1", "m2"):
            raise ConfigError(f"arch must be 'm1' or 'm2', got {self.arch!r}")
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        if len(self.stage_widths) != 5:
            raise ConfigError(
                f"need 5 stage widths (4 encoder + bottleneck), got {len(self.stage_widths)}")
        if any(b <= a for a, b in zip(self.stage_widths, self.stage_widths[1:])):
            raise ConfigError(f"stage widths must strictly increase, got {self.stage_widths}")
        if self.input_size < 16 or self.input_size % 16 != 0:
            raise ConfigError(f"input size must be a positive multiple of 16, got {self.input_size}")
        if self.arch == "m2" and min(self.stage_widths) < 8:
            raise ConfigError(f"m2 needs all stage widths >= 8, got {self.stage_widths}")

    def to_dict(self):
        return {
            "arch": self.arch,
            "input_size": self.input_size,
            "stage_widths": list(self.stage_widths),
            "scse": {"reduction": self.scse.reduction, "combine": self.scse.combine},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                arch=d["arch"],
                input_size=d["input_size"],
                stage_widths=tuple(d["stage_widths"]),
                scse=ScseSpec(**d["scse"]),
                seed=d["seed"],
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed model config: {exc}") from exc


class _EncoderStage:
    def __init__(self, name, cin, width, config, rng):
        variant = config.arch
        self.block1 = ConvBlock(f"{name}.conv1", cin, ConvBlockSpec(width, variant), rng)
        self.block2 = ConvBlock(f"{name}.conv2", width, ConvBlockSpec(width, variant), rng)
        self.scse = ScseBlock(f"{name}.scse", width, config.scse, rng)

    def __call__(self, x, mode):
        h = self.block1(x, mode)
        h = self.block2(h, mode)
        return self.scse(h)

    def parameters(self):
        return self.block1.parameters() + self.block2.parameters() + self.scse.parameters()

    def batchnorm_states(self):
        return self.block1.batchnorm_states() + self.block2.batchnorm_states()


class _DecoderStage(_EncoderStage):
    def __init__(self, name, cin, width, config, rng):
        # Transposed conv halves the channel count before the skip concat,
        # so the two blocks see 2*width in and produce width out.
        self.up_w = Parameter(f"{name}.up.w",
                              _he(rng, (3, 3, width, cin), 9 * cin))
        self.up_b = Parameter(f"{name}.up.b", np.zeros(width, np.float32))
        super().__init__(name, 2 * width, width, config, rng)

    def upsample(self, x):
        return T.conv_transpose2d(x, self.up_w.value, self.up_b.value)

    def parameters(self):
        return [self.up_w, self.up_b] + super().parameters()


def _he(rng, dims, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=dims).astype(np.float32)


class Model:
    """Built network: config, ordered parameters, and batchnorm state."""

    def __init__(self, config: ArchConfig):
        self.config = config
        rng = np.random.default_rng(np.random.PCG64(config.seed))
        widths = config.stage_widths
        enc_in = (3,) + widths[:3]
        self.encoder = [
            _EncoderStage(f"enc{i}", enc_in[i], widths[i], config, rng)
            for i in range(4)
        ]
        self.bottleneck = _EncoderStage("mid", widths[3], widths[4], config, rng)
        self.decoder = [
            _DecoderStage(f"dec{i}", widths[4 - i], widths[3 - i], config, rng)
            for i in range(4)
        ]
        self.head_w = Parameter("head.w", _he(rng, (1, 1, widths[0], 1), widths[0]))
        self.head_b = Parameter("head.b", np.zeros(1, np.float32))
        self._check_unique_names()

    def _check_unique_names(self):
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ConfigError("duplicate parameter names in model")

    def parameters(self):
        out = []
        for stage in self.encoder:
            out += stage.parameters()
        out += self.bottleneck.parameters()
        for stage in self.decoder:
            out += stage.parameters()
        out += [self.head_w, self.head_b]
        return out

    def batchnorm_states(self):
        out = []
        for stage in self.encoder:
            out += stage.batchnorm_states()
        out += self.bottleneck.batchnorm_states()
        for stage in self.decoder:
            out += stage.batchnorm_states()
        return out

    def forward(self, x: Tensor, mode="infer") -> Tensor:
        """Map (N, S, S, 3) floats in [0, 1] to (N, S, S, 1) probabilities."""
        skips = []
        h = x
        for stage in self.encoder:
            h = stage(h, mode)
            skips.append(h)
            h = T.maxpool2x2(h)
        h = self.bottleneck(h, mode)
        for stage, skip in zip(self.decoder, reversed(skips)):
            up = stage.upsample(h)
            h = T.concat_channels(up, skip)
            h = stage.block1(h, mode)
            h = stage.block2(h, mode)
            h = stage.scse(h)
        h = T.conv2d(h, self.head_w.value, self.head_b.value, padding="same")
        return T.sigmoid(h)

    def astype(self, dtype):
        """Copy of this model with every parameter and buffer in ``dtype``."""
        other = Model(self.config)
        for dst, src in zip(other.parameters(), self.parameters()):
            dst.value = src.value.astype(dtype)
        for (_, dst), (_, src) in zip(other.batchnorm_states(), self.batchnorm_states()):
            dst.running_mean = src.running_mean.astype(dtype)
            dst.running_var = src.running_var.astype(dtype)
            dst.gamma.value = src.gamma.value.astype(dtype)
            dst.beta.value = src.beta.value.astype(dtype)
        return other

    def state_arrays(self):
        """Ordered (name, array) pairs: parameters then batchnorm buffers."""
        out = [(p.name, p.value.data) for p in self.parameters()]
        for prefix, bn in self.batchnorm_states():
            out.append((f"{prefix}.running_mean", bn.running_mean))
            out.append((f"{prefix}.running_var", bn.running_var))
        return out

    def load_state_arrays(self, named):
        table = dict(named)
        for p in self.parameters():
            arr = table.pop(p.name, None)
            if arr is None or arr.shape != p.value.data.shape:
                raise FormatError(f"checkpoint is missing or mismatches tensor {p.name!r}")
            p.value = Tensor(arr.astype(np.float32))
        for prefix, bn in self.batchnorm_states():
            for attr in ("running_mean", "running_var"):
                key = f"{prefix}.{attr}"
                arr = table.pop(key, None)
                if arr is None or arr.shape != getattr(bn, attr).shape:
                    raise FormatError(f"checkpoint is missing or mismatches tensor {key!r}")
                setattr(bn, attr, arr.astype(np.float32))
        if table:
            raise FormatError(f"checkpoint has {len(table)} unexpected tensors")


def build_model(config: ArchConfig) -> Model:
    """Instantiate a seeded model; identical seeds give identical weights."""
    return Model(config)


# ---------------------------------------------------------------------------
# Prediction


def predict(model: Model, image) -> np.ndarray:
    """Probability mask for an RGB image of any size, via pre-scaling.

    The image is bilinearly resized to the network input size, normalized
    to [0, 1], run once in infer mode, and the mask is bilinearly resized
    back to the original extents.
    """
    img = check_rgb8(image)
    h, w = img.shape[:2]
    s = model.config.input_size
    small = imaging.resize_bilinear_float(img, s, s).astype(np.float32) / 255.0
    out = model.forward(Tensor(small[None]), mode="infer")
    mask = out.data[0, :, :, 0]
    if (h, w) != (s, s):
        mask = imaging.resize_bilinear_float(mask, h, w)
    return np.clip(mask, 0.0, 1.0).astype(np.float32)


def predict_tiled(model: Model, image, tile=256, overlap=32) -> np.ndarray:
    """Probability mask from native-resolution tiles, averaged on overlaps.

    Images smaller than the tile are padded reflectively; windows slide by
    tile - overlap with the final window shifted flush to the edge.
    """
    img = check_rgb8(image)
    if not 0 <= overlap < tile:
        raise ConfigError(f"overlap must lie in [0, tile), got {overlap}")
    if tile % 16 != 0:
        raise ConfigError(f"tile must be a multiple of 16, got {tile}")
    h, w = img.shape[:2]
    ph, pw = max(tile - h, 0), max(tile - w, 0)
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    hh, ww = img.shape[:2]
    stride = tile - overlap
    rows = sorted({min(r, hh - tile) for r in range(0, hh - tile + stride, stride)})
    cols = sorted({min(c, ww - tile) for c in range(0, ww - tile + stride, stride)})
    acc = np.zeros((hh, ww), np.float64)
    cnt = np.zeros((hh, ww), np.float64)
    for r in rows:
        for c in cols:
            patch = img[r : r + tile, c : c + tile].astype(np.float32) / 255.0
            out = model.forward(Tensor(patch[None]), mode="infer")
            acc[r : r + tile, c : c + tile] += out.data[0, :, :, 0]
            cnt[r : r + tile, c : c + tile] += 1.0
    mask = (acc / cnt)[:h, :w]
    return np.clip(mask, 0.0, 1.0).astype(np.float32)


def fuse_max(p1, p2) -> np.ndarray:
    """Pixelwise maximum of two probability masks."""
    a = check_prob_mask(p1, "first mask")
    b = check_prob_mask(p2, "second mask")
    if a.shape != b.shape:
        raise ShapeError(f"mask dims differ: {a.shape} vs {b.shape}")
    return np.maximum(a, b)


def fuse_avg(p1, p2) -> np.ndarray:
    """Pixelwise mean of two probability masks."""
    a = check_prob_mask(p1, "first mask")
    b = check_prob_mask(p2, "second mask")
    if a.shape != b.shape:
        raise ShapeError(f"mask dims differ: {a.shape} vs {b.shape}")
    return ((a.astype(np.float64) + b.astype(np.float64)) / 2.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Checkpoint serialization
#
# Layout: magic "DFNW", u32 version, u32 config length + config JSON,
# u32 tensor count, then per tensor: u32 name length, UTF-8 name, u32 rank,
# u32 dims, raw little-endian float32 data (row-major). Everything is
# little-endian; the JSON uses sorted keys so files are byte-stable.


def save_checkpoint(model: Model, path):
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    cfg = json.dumps(model.config.to_dict(), sort_keys=True,
                     separators=(",", ":")).encode("utf-8")
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    tensors = model.state_arrays()
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        nb = name.encode("utf-8")
        blob += struct.pack("<I", len(nb))
        blob += nb
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path, expected_arch=None) -> Model:
    """Rebuild a model from a checkpoint file, bit-exact.

    ``expected_arch`` guards against loading a checkpoint of the other
    variant when a specific one was requested.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    rd = _Reader(data)
    if rd.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path} is not a model checkpoint (bad magic)")
    version = rd.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        cfg_raw = json.loads(rd.take(rd.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint config: {exc}") from exc
    config = ArchConfig.from_dict(cfg_raw)
    if expected_arch is not None and config.arch != expected_arch:
        raise ConfigError(
            f"checkpoint holds arch {config.arch!r}, requested {expected_arch!r}")
    named = []
    for _ in range(rd.u32()):
        name = rd.take(rd.u32()).decode("utf-8")
        rank = rd.u32()
        if rank > 8:
            raise FormatError(f"implausible tensor rank {rank}")
        dims = struct.unpack(f"<{rank}I", rd.take(4 * rank))
        count = int(np.prod(dims)) if dims else 1
        raw = rd.take(4 * count)
        named.append((name, np.frombuffer(raw, dtype="<f4").reshape(dims).copy()))
    if rd.pos != len(data):
        raise FormatError(f"checkpoint has {len(data) - rd.pos} trailing bytes")
    model = Model(config)
    model.load_state_arrays(named)
    return model
