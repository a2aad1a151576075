"""Composite network blocks: conv+BN+relu units and scSE recalibration.

Two conv-block variants exist. The standard one ("m1") is a single 3x3
convolution followed by batch normalization and relu. The mixed-kernel
variant ("m2") runs all but four filters at 3x3 and exactly four at 5x5,
concatenates the two feature groups, then normalizes and activates the
full stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Parameter

WIDE_FILTERS = 4  # filters run at 5x5 in the m2 block


@dataclass
class ConvBlockSpec:
    out_channels: int
    variant: str = "m1"  # "m1" -> all 3x3, "m2" -> four filters at 5x5
    stage: int = 0

    def __post_init__(self):
        if self.variant not in ("m1", "m2"):
            raise ConfigError(f"unknown block variant {self.variant!r}")
        if self.variant == "m2" and self.out_channels < 2 * WIDE_FILTERS:
            raise ConfigError(
                f"m2 blocks need >= {2 * WIDE_FILTERS} channels to host the "
                f"{WIDE_FILTERS} wide filters, got {self.out_channels}")


@dataclass
class ScseSpec:
    reduction: int = 2
    combine: str = "add"  # or "max"

    def __post_init__(self):
        if self.reduction < 1:
            raise ConfigError(f"reduction must be >= 1, got {self.reduction}")
        if self.combine not in ("add", "max"):
            raise ConfigError(f"combine must be 'add' or 'max', got {self.combine!r}")


class BatchNormState:
    """Per-channel affine parameters plus running statistics.

    Momentum 0.9 keeps the running statistics usable after a few hundred
    steps, which short desk-scale runs rely on.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.9, dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter("gamma", np.ones(channels, dtype))
        self.beta = Parameter("beta", np.zeros(channels, dtype))
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)

    def parameters(self):
        return [self.gamma, self.beta]

    def astype(self, dtype):
        out = BatchNormState(self.channels, self.eps, self.momentum, dtype)
        out.gamma = self.gamma.astype(dtype)
        out.beta = self.beta.astype(dtype)
        out.running_mean = self.running_mean.astype(dtype)
        out.running_var = self.running_var.astype(dtype)
        return out


def he_uniform(rng, dims, fan_in, dtype=np.float32):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=dims).astype(dtype)


class ConvBlock:
    """conv -> batchnorm -> relu; the m2 variant splits filters by kernel size."""

    def __init__(self, name, in_channels, spec: ConvBlockSpec, rng):
        self.name = name
        self.spec = spec
        cout = spec.out_channels
        std = cout - WIDE_FILTERS if spec.variant == "m2" else cout
        self.w3 = Parameter(f"{name}.w3",
                            he_uniform(rng, (3, 3, in_channels, std), 9 * in_channels))
        self.b3 = Parameter(f"{name}.b3", np.zeros(std, np.float32))
        if spec.variant == "m2":
            self.w5 = Parameter(
                f"{name}.w5",
                he_uniform(rng, (5, 5, in_channels, WIDE_FILTERS), 25 * in_channels))
            self.b5 = Parameter(f"{name}.b5", np.zeros(WIDE_FILTERS, np.float32))
        else:
            self.w5 = None
            self.b5 = None
        self.bn = BatchNormState(cout)
        self.bn.gamma.name = f"{name}.bn.gamma"
        self.bn.beta.name = f"{name}.bn.beta"

    def __call__(self, x, mode):
        h = T.conv2d(x, self.w3.value, self.b3.value, padding="same")
        if self.w5 is not None:
            wide = T.conv2d(x, self.w5.value, self.b5.value, padding="same")
            h = T.concat_channels(h, wide)
        h = T.batchnorm(h, self.bn, mode)
        return T.relu(h)

    def parameters(self):
        out = [self.w3, self.b3]
        if self.w5 is not None:
            out += [self.w5, self.b5]
        return out + self.bn.parameters()

    def batchnorm_states(self):
        return [(f"{self.name}.bn", self.bn)]


class ScseBlock:
    """Concurrent channel and spatial gating.

    The channel branch squeezes spatially (global average pool), passes a
    bottleneck MLP, and rescales channels by its sigmoid output. The spatial
    branch collapses channels with a 1x1 conv and rescales sites. Branch
    outputs are combined by addition or pointwise max.
    """

    def __init__(self, name, channels, spec: ScseSpec, rng):
        if channels // spec.reduction < 1:
            raise ConfigError(
                f"reduction {spec.reduction} empties the bottleneck at width {channels}")
        self.name = name
        self.spec = spec
        self.channels = channels
        mid = channels // spec.reduction
        self.fc1_w = Parameter(f"{name}.cse.fc1.w",
                               he_uniform(rng, (channels, mid), channels))
        self.fc1_b = Parameter(f"{name}.cse.fc1.b", np.zeros(mid, np.float32))
        self.fc2_w = Parameter(f"{name}.cse.fc2.w", he_uniform(rng, (mid, channels), mid))
        self.fc2_b = Parameter(f"{name}.cse.fc2.b", np.zeros(channels, np.float32))
        self.sse_w = Parameter(f"{name}.sse.w",
                               he_uniform(rng, (1, 1, channels, 1), channels))
        self.sse_b = Parameter(f"{name}.sse.b", np.zeros(1, np.float32))

    def channel_gate(self, x):
        g = T.global_avg_pool(x)
        flat = (g.dims[0], self.channels) if len(g.dims) == 4 else (self.channels,)
        g = T.reshape(g, flat)
        g = T.relu(T.dense(g, self.fc1_w.value, self.fc1_b.value))
        return T.sigmoid(T.dense(g, self.fc2_w.value, self.fc2_b.value))

    def spatial_gate(self, x):
        return T.sigmoid(T.conv2d(x, self.sse_w.value, self.sse_b.value, padding="same"))

    def cse(self, x):
        return T.scale_channels(x, self.channel_gate(x))

    def sse(self, x):
        return T.scale_spatial(x, self.spatial_gate(x))

    def __call__(self, x):
        c = self.cse(x)
        s = self.sse(x)
        return T.add(c, s) if self.spec.combine == "add" else T.maximum(c, s)

    def parameters(self):
        return [self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b,
                self.sse_w, self.sse_b]
