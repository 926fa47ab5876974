"""The two-stream fusion generator and the conditional patch discriminator.

Generator: PAN (replicated to 4 channels) and bicubic-upsampled MS are
high-pass filtered, embedded by two streams, fused on the concatenated
features, and restored to a 4-band residual that is added to the
upsampled MS (global skip). All hidden convolutions are 3x3/stride 1
with 32 output channels; the restoration conv outputs 4 channels and is
zero-initialized so training starts from the bicubic identity.

Discriminator: five 4x4 convolutions (64, 128, 256, 512, 1 channels;
strides 2,2,2,1,1; padding 1), LeakyReLU activations, instance norm on
the middle three layers. It scores (PAN, upsampled LR MS, fused) as a
9-channel conditioned input and returns a patch score map.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import imaging
from .autodiff import Parameter

HIDDEN_CHANNELS = 32
MS_BANDS = 4
RCA_REDUCTION = 8
LEAKY_SLOPE = 0.2
INIT_STD = 0.02

BLOCK_KINDS = ("rca", "residual")


class Conv2d:
    """Convolution layer owning weight/bias parameters."""

    def __init__(self, name: str, c_in: int, c_out: int, kernel: int = 3,
                 stride: int = 1, padding: int | None = None,
                 rng: np.random.Generator | None = None, zero_init: bool = False):
        if padding is None:
            padding = kernel // 2
        self.stride = stride
        self.padding = padding
        if zero_init:
            w = np.zeros((c_out, c_in, kernel, kernel), dtype=np.float32)
        else:
            w = rng.normal(0.0, INIT_STD, size=(c_out, c_in, kernel, kernel))
        self.weight = Parameter(f"{name}.weight", w)
        self.bias = Parameter(f"{name}.bias", np.zeros(c_out, dtype=np.float32))

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride,
                         padding=self.padding)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class ResidualBlock:
    """x + IN(conv(relu(IN(conv(x))))); identity under all-zero weights."""

    def __init__(self, name: str, channels: int, rng: np.random.Generator):
        self.conv1 = Conv2d(f"{name}.conv1", channels, channels, rng=rng)
        self.conv2 = Conv2d(f"{name}.conv2", channels, channels, rng=rng)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        y = ad.relu(ad.instance_norm(self.conv1(x)))
        y = ad.instance_norm(self.conv2(y))
        return ad.add(x, y)

    def parameters(self) -> list[Parameter]:
        return self.conv1.parameters() + self.conv2.parameters()


class RcaBlock:
    """Residual block with channel attention.

    The conv path output is squeezed by global average pooling, passed
    through two fully-connected layers (reduction 8) and a sigmoid, and
    the resulting per-channel factors rescale the conv path before the
    skip addition.
    """

    def __init__(self, name: str, channels: int, rng: np.random.Generator):
        squeeze = max(channels // RCA_REDUCTION, 1)
        self.conv1 = Conv2d(f"{name}.conv1", channels, channels, rng=rng)
        self.conv2 = Conv2d(f"{name}.conv2", channels, channels, rng=rng)
        # 1x1 convolutions act as the FC pair on the pooled descriptor
        self.fc1 = Conv2d(f"{name}.fc1", channels, squeeze, kernel=1, rng=rng)
        self.fc2 = Conv2d(f"{name}.fc2", squeeze, channels, kernel=1, rng=rng)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        y = ad.relu(ad.instance_norm(self.conv1(x)))
        y = ad.instance_norm(self.conv2(y))
        s = ad.sigmoid(self.fc2(ad.relu(self.fc1(ad.global_avg_pool(y)))))
        return ad.add(x, ad.mul(y, s))

    def parameters(self) -> list[Parameter]:
        return (self.conv1.parameters() + self.conv2.parameters()
                + self.fc1.parameters() + self.fc2.parameters())


def _make_block(kind: str, name: str, channels: int, rng: np.random.Generator):
    if kind == "rca":
        return RcaBlock(name, channels, rng)
    if kind == "residual":
        return ResidualBlock(name, channels, rng)
    raise ValueError(f"block kind must be one of {BLOCK_KINDS}, got {kind!r}")


class _Stream:
    """Entry convolution (with ReLU) followed by a run of blocks."""

    def __init__(self, name: str, c_in: int, channels: int, n_blocks: int,
                 kind: str, rng: np.random.Generator):
        self.conv_in = Conv2d(f"{name}.conv_in", c_in, channels, rng=rng)
        self.blocks = [
            _make_block(kind, f"{name}.block{i + 1}", channels, rng)
            for i in range(n_blocks)
        ]

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        y = ad.relu(self.conv_in(x))
        for block in self.blocks:
            y = block(y)
        return y

    def parameters(self) -> list[Parameter]:
        out = self.conv_in.parameters()
        for block in self.blocks:
            out += block.parameters()
        return out


class Generator:
    def __init__(self, block_kind: str = "rca", seed: int = 0,
                 rng: np.random.Generator | None = None,
                 detail_filter: imaging.FilterSpec = imaging.DETAIL_FILTER):
        if block_kind not in BLOCK_KINDS:
            raise ValueError(f"block kind must be one of {BLOCK_KINDS}, got {block_kind!r}")
        if rng is None:
            rng = np.random.default_rng(seed)
        self.block_kind = block_kind
        self.detail_filter = detail_filter
        ch = HIDDEN_CHANNELS
        self.emb_pan = _Stream("G.emb_pan", MS_BANDS, ch, 1, block_kind, rng)
        self.emb_ms = _Stream("G.emb_ms", MS_BANDS, ch, 1, block_kind, rng)
        self.fusion = _Stream("G.fusion", 2 * ch, ch, 3, block_kind, rng)
        self.rst_block = _make_block(block_kind, "G.rst.block1", ch, rng)
        self.rst_conv = Conv2d("G.rst.conv_out", ch, MS_BANDS, zero_init=True)

    def __call__(self, pan: ad.Tensor, lrms: ad.Tensor) -> ad.Tensor:
        n, c, h, w = pan.shape
        if c != 1:
            raise ValueError(f"pan must have 1 channel, got {c}")
        if h < 16 or w < 16:
            raise ValueError(f"pan must be at least 16x16, got {h}x{w}")
        if lrms.shape != (n, MS_BANDS, h // 4, w // 4):
            raise ValueError(
                f"lrms shape {lrms.shape} does not match pan {pan.shape} "
                f"(expected ({n}, {MS_BANDS}, {h // 4}, {w // 4}))"
            )
        up4 = imaging.bicubic_resize(lrms, 4)
        hp_pan = imaging.high_pass(imaging.replicate_pan(pan), self.detail_filter)
        hp_ms = imaging.high_pass(up4, self.detail_filter)
        fused = self.fusion(
            ad.concat_channels(self.emb_pan(hp_pan), self.emb_ms(hp_ms))
        )
        residual = self.rst_conv(self.rst_block(fused))
        return ad.add(up4, residual)

    def parameters(self) -> list[Parameter]:
        return (self.emb_pan.parameters() + self.emb_ms.parameters()
                + self.fusion.parameters() + self.rst_block.parameters()
                + self.rst_conv.parameters())

    def named_parameters(self) -> dict[str, Parameter]:
        return collect_named(self.parameters())


class Discriminator:
    CHANNELS = (64, 128, 256, 512, 1)
    STRIDES = (2, 2, 2, 1, 1)

    def __init__(self, seed: int = 0, rng: np.random.Generator | None = None,
                 in_channels: int = 1 + 2 * MS_BANDS):
        if rng is None:
            rng = np.random.default_rng(seed)
        self.layers = []
        c_in = in_channels
        for i, (c_out, stride) in enumerate(zip(self.CHANNELS, self.STRIDES)):
            self.layers.append(
                Conv2d(f"D.layer{i + 1}", c_in, c_out, kernel=4, stride=stride,
                       padding=1, rng=rng)
            )
            c_in = c_out

    def __call__(self, pan: ad.Tensor, lrms: ad.Tensor, fused: ad.Tensor) -> ad.Tensor:
        n, c, h, w = pan.shape
        if c != 1:
            raise ValueError(f"pan must have 1 channel, got {c}")
        if lrms.shape != (n, MS_BANDS, h // 4, w // 4):
            raise ValueError(
                f"lrms shape {lrms.shape} does not match pan {pan.shape}"
            )
        if fused.shape != (n, MS_BANDS, h, w):
            raise ValueError(
                f"fused shape {fused.shape} does not match pan {pan.shape}"
            )
        up = imaging.bicubic_resize(lrms, 4)
        x = ad.concat_channels(pan, up, fused)
        h1 = ad.leaky_relu(self.layers[0](x), LEAKY_SLOPE)
        h2 = ad.leaky_relu(ad.instance_norm(self.layers[1](h1)), LEAKY_SLOPE)
        h3 = ad.leaky_relu(ad.instance_norm(self.layers[2](h2)), LEAKY_SLOPE)
        h4 = ad.leaky_relu(ad.instance_norm(self.layers[3](h3)), LEAKY_SLOPE)
        return self.layers[4](h4)

    def parameters(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            out += layer.parameters()
        return out

    def named_parameters(self) -> dict[str, Parameter]:
        return collect_named(self.parameters())


def collect_named(params: list[Parameter]) -> dict[str, Parameter]:
    """Index parameters by name, rejecting duplicates."""
    out: dict[str, Parameter] = {}
    for p in params:
        if p.name in out:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        out[p.name] = p
    return out


def parameter_count(module) -> int:
    return sum(p.data.size for p in module.parameters())


def generator_from_state(state: dict[str, np.ndarray]) -> Generator:
    """Rebuild a generator from checkpoint arrays, inferring the block kind."""
    from . import checkpoint

    kind = "rca" if any(".fc1." in name for name in state) else "residual"
    gen = Generator(block_kind=kind)
    checkpoint.load_into(gen.named_parameters(), state, prefix="G.")
    return gen


def generator_forward(gen: Generator, pan: ad.Tensor, lrms: ad.Tensor) -> ad.Tensor:
    return gen(pan, lrms)


def discriminator_forward(disc: Discriminator, pan: ad.Tensor, lrms: ad.Tensor,
                          fused: ad.Tensor) -> ad.Tensor:
    return disc(pan, lrms, fused)
