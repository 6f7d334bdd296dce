"""Two-encoder mixture-of-experts model for classification under unknown biases.

Two structurally identical residual encoders never share parameters: the
debiased encoder D is meant to carry target features, the bias encoder B the
spurious ones.  After each of the M blocks an expert reads both feature maps
through small per-branch conv trunks, pools them to embeddings, and runs two
heads: the debiased head sees ``concat(e_d, detach(e_b))``, the bias head
``concat(detach(e_d), e_b)``.  The cross-branch stop-gradients are what give
the two encoders their roles.  A single affine gate over the detached expert
logits produces mixture weights, and the final prediction is the gated linear
mixture of the debiased logits.

Input batches are ``(N, 3, S, S)`` float arrays normalized to [0, 1]; S must
be at least 32.  Internally everything runs NHWC.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import tensor as T
from .nn import BatchNorm2d, Conv2d, Linear, Module
from .tensor import ShapeError, Tensor


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    m_experts: int = 4
    block_channels: tuple[int, ...] = (16, 32, 64, 128)
    expert_embed_dim: int = 64
    head_hidden: int = 16
    n_classes: int = 10
    image_size: int = 64
    # None resolves to (1, 1, 2, 2) for M = 4, else stride 2 after block 1
    block_strides: tuple[int, ...] | None = None
    # single affine gate (no hidden layer); kept here for config echo clarity
    gate_hidden: None = None
    # alternative gap-fills, off by default
    shared_expert_trunk: bool = False
    counterfactual_head: str = "debias"  # which head scores counterfactual pairs

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(self.block_channels))
        if self.m_experts < 1:
            raise ValueError(f"m_experts must be >= 1, got {self.m_experts}")
        if len(self.block_channels) != self.m_experts:
            raise ValueError(
                f"block_channels must have m_experts={self.m_experts} entries, got {self.block_channels}"
            )
        if self.block_strides is not None:
            object.__setattr__(self, "block_strides", tuple(self.block_strides))
            if len(self.block_strides) != self.m_experts:
                raise ValueError(
                    f"block_strides must have m_experts={self.m_experts} entries, got {self.block_strides}"
                )
        if self.image_size < 32:
            raise ShapeError(f"image_size must be at least 32, got {self.image_size}")
        if self.counterfactual_head not in ("debias", "bias"):
            raise ValueError(f"counterfactual_head must be 'debias' or 'bias', got {self.counterfactual_head}")

    def resolved_strides(self) -> tuple[int, ...]:
        if self.block_strides is not None:
            return self.block_strides
        if self.m_experts == 4:
            return (1, 1, 2, 2)
        return (1,) + (2,) * (self.m_experts - 1)

    def block_spatial_sizes(self) -> tuple[int, ...]:
        """Spatial side of each block's output map for the configured input size."""
        s = self.image_size // 4  # stem conv stride 2, then maxpool stride 2
        out = []
        for stride in self.resolved_strides():
            s = (s + stride - 1) // stride if stride > 1 else s
            out.append(s)
        return tuple(out)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["block_channels"] = list(self.block_channels)
        d["block_strides"] = list(self.block_strides) if self.block_strides else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["block_channels"] = tuple(d["block_channels"])
        if d.get("block_strides"):
            d["block_strides"] = tuple(d["block_strides"])
        return cls(**d)


@dataclasses.dataclass
class FeatureSet:
    z_d: list[Tensor]
    z_b: list[Tensor]


@dataclasses.dataclass
class PnDOutput:
    y_d_logits: list[Tensor]
    y_b_logits: list[Tensor]
    gate_p: Tensor
    y_mixed: Tensor
    e_d: list[Tensor]
    e_b: list[Tensor]


class ResidualBlock(Module):
    """Two 3x3 convs with identity (or 1x1 projection) shortcut."""

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, padding=1, bias=False)
        self.bn1 = BatchNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, stride=1, padding=1, bias=False)
        self.bn2 = BatchNorm2d(c_out)
        if stride != 1 or c_in != c_out:
            self.proj_conv = Conv2d(c_in, c_out, 1, rng, stride=stride, padding=0, bias=False)
            self.proj_bn = BatchNorm2d(c_out)
            object.__setattr__(self, "_has_proj", True)
        else:
            object.__setattr__(self, "_has_proj", False)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        shortcut = self.proj_bn(self.proj_conv(x)) if self._has_proj else x
        return T.relu(T.add(h, shortcut))


class Stem(Module):
    """7x7 stride-2 conv, batchnorm, ReLU, 3x3 stride-2 maxpool."""

    def __init__(self, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(3, c_out, 7, rng, stride=2, padding=3, bias=False)
        self.bn = BatchNorm2d(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return T.max_pool2d(T.relu(self.bn(self.conv(x))), 3, 2, 1)


class Encoder(Module):
    """Stem plus M residual blocks; forward returns every block's map."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.stem = Stem(config.block_channels[0], rng)
        strides = config.resolved_strides()
        c_prev = config.block_channels[0]
        object.__setattr__(self, "m", config.m_experts)
        for i, (c, s) in enumerate(zip(config.block_channels, strides), start=1):
            setattr(self, f"block{i}", ResidualBlock(c_prev, c, s, rng))
            c_prev = c

    def __call__(self, x: Tensor) -> list[Tensor]:
        h = self.stem(x)
        maps = []
        for i in range(1, self.m + 1):
            h = self._children[f"block{i}"](h)
            maps.append(h)
        return maps


class ExpertTrunk(Module):
    """Two 3x3 convs to the embedding width, then global average pooling."""

    def __init__(self, c_in: int, embed: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(c_in, embed, 3, rng, stride=stride, padding=1, bias=False)
        self.bn1 = BatchNorm2d(embed)
        self.conv2 = Conv2d(embed, embed, 3, rng, stride=1, padding=1, bias=False)
        self.bn2 = BatchNorm2d(embed)

    def __call__(self, z: Tensor) -> Tensor:
        h = T.relu(self.bn1(self.conv1(z)))
        h = T.relu(self.bn2(self.conv2(h)))
        return T.global_avg_pool(h)


class ExpertHead(Module):
    """Affine(2*embed -> hidden), ReLU, affine(hidden -> classes).

    Input is always ``concat(e_d, e_b)`` in that order; the caller detaches
    whichever side must not receive gradients.
    """

    def __init__(self, embed: int, hidden: int, n_classes: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(2 * embed, hidden, rng)
        self.fc2 = Linear(hidden, n_classes, rng)
        object.__setattr__(self, "in_width", 2 * embed)

    def __call__(self, e_d: Tensor, e_b: Tensor) -> Tensor:
        if e_d.shape[1] + e_b.shape[1] != self.in_width:
            raise ShapeError(
                f"expert head: embedding widths {e_d.shape} + {e_b.shape} do not concatenate to {self.in_width}"
            )
        h = T.concat([e_d, e_b], axis=1)
        return self.fc2(T.relu(self.fc1(h)))


class Expert(Module):
    """Per-block expert: two branch trunks plus debiased and bias heads."""

    def __init__(self, c_in: int, config: ModelConfig, trunk_stride: int, rng: np.random.Generator):
        super().__init__()
        embed = config.expert_embed_dim
        self.trunk_d = ExpertTrunk(c_in, embed, trunk_stride, rng)
        if config.shared_expert_trunk:
            object.__setattr__(self, "_shared_trunk", True)
        else:
            self.trunk_b = ExpertTrunk(c_in, embed, trunk_stride, rng)
            object.__setattr__(self, "_shared_trunk", False)
        self.head_d = ExpertHead(embed, config.head_hidden, config.n_classes, rng)
        self.head_b = ExpertHead(embed, config.head_hidden, config.n_classes, rng)

    def embed(self, z_d: Tensor, z_b: Tensor) -> tuple[Tensor, Tensor]:
        e_d = self.trunk_d(z_d)
        e_b = self.trunk_d(z_b) if self._shared_trunk else self.trunk_b(z_b)
        return e_d, e_b

    def joint(self, z_d: Tensor, z_b: Tensor):
        """Full path: trunks then both heads.  Returns (y_d, y_b, e_d, e_b)."""
        e_d, e_b = self.embed(z_d, z_b)
        return self.swap(e_d, e_b) + (e_d, e_b)

    def swap(self, e_d: Tensor, e_b: Tensor) -> tuple[Tensor, Tensor]:
        """Score caller-supplied embeddings (counterfactual recombinations).

        Bypasses the trunks.  Each head detaches the partner branch: the
        debiased head sees concat(e_d, detach(e_b)), the bias head
        concat(detach(e_d), e_b).
        """
        y_d = self.head_d(e_d, T.detach(e_b))
        y_b = self.head_b(T.detach(e_d), e_b)
        return y_d, y_b


class Gate(Module):
    """One affine map over the concatenated detached expert logits."""

    def __init__(self, m: int, n_classes: int, rng: np.random.Generator):
        super().__init__()
        self.fc = Linear(m * n_classes, m, rng)

    def __call__(self, y_d_logits: list[Tensor]) -> tuple[Tensor, Tensor]:
        inp = T.concat([T.detach(y) for y in y_d_logits], axis=1)
        gate_p = T.softmax(self.fc(inp), axis=1)
        n, m = gate_p.shape
        stacked = T.concat([T.reshape(y, (n, 1, -1)) for y in y_d_logits], axis=1)
        y_mixed = T.tsum(T.mul(stacked, T.reshape(gate_p, (n, m, 1))), axis=1)
        return gate_p, y_mixed


def _check_batch(x, image_size: int) -> None:
    shape = x.shape if hasattr(x, "shape") else np.shape(x)
    if len(shape) != 4 or shape[1] != 3:
        raise ShapeError(f"expected batch shaped (N, 3, S, S), got {shape}")
    if shape[2] < 32 or shape[2] != shape[3]:
        raise ShapeError(f"expected square images with side >= 32, got {shape}")
    if shape[2] != image_size:
        raise ShapeError(f"model built for image size {image_size}, got batch {shape}")


class PnDModel(Module):
    """Debiased encoder, bias encoder, M experts, and the gate."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        object.__setattr__(self, "config", config)
        self.encoder_d = Encoder(config, rng)
        self.encoder_b = Encoder(config, rng)
        spatials = config.block_spatial_sizes()
        c_in = config.block_channels[0]
        for i in range(1, config.m_experts + 1):
            c = config.block_channels[i - 1]
            trunk_stride = 2 if spatials[i - 1] > 4 else 1
            setattr(self, f"expert{i}", Expert(c, config, trunk_stride, rng))
        self.gate = Gate(config.m_experts, config.n_classes, rng)

    def experts(self) -> list[Expert]:
        return [self._children[f"expert{i}"] for i in range(1, self.config.m_experts + 1)]

    def encode(self, x) -> FeatureSet:
        _check_batch(x, self.config.image_size)
        xt = x if isinstance(x, Tensor) else Tensor(x)
        xh = T.transpose_nchw_to_nhwc(xt)
        return FeatureSet(z_d=self.encoder_d(xh), z_b=self.encoder_b(xh))

    def forward(self, x) -> PnDOutput:
        feats = self.encode(x)
        y_d, y_b, e_d, e_b = [], [], [], []
        for i, expert in enumerate(self.experts()):
            yd, yb, ed, eb = expert.joint(feats.z_d[i], feats.z_b[i])
            y_d.append(yd)
            y_b.append(yb)
            e_d.append(ed)
            e_b.append(eb)
        gate_p, y_mixed = self.gate(y_d)
        return PnDOutput(y_d_logits=y_d, y_b_logits=y_b, gate_p=gate_p, y_mixed=y_mixed, e_d=e_d, e_b=e_b)

    __call__ = forward


class BaselineClassifier(Module):
    """Single encoder plus one linear head, trained with plain cross-entropy."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        object.__setattr__(self, "config", config)
        self.encoder = Encoder(config, rng)
        self.head = Linear(config.block_channels[-1], config.n_classes, rng)

    def block_features(self, x) -> list[Tensor]:
        """Pooled per-block features (for depth probes)."""
        _check_batch(x, self.config.image_size)
        xt = x if isinstance(x, Tensor) else Tensor(x)
        maps = self.encoder(T.transpose_nchw_to_nhwc(xt))
        return [T.global_avg_pool(z) for z in maps]

    def forward(self, x) -> Tensor:
        return self.head(self.block_features(x)[-1])

    __call__ = forward
