"""Multi-stream encoder/decoder segmentation network with late fusion.

Each sensor stream is a dilated residual encoder (output stride 8), a pyramid
context module and a bilinear-upsampling decoder that emits two-class
logits on a shared output grid. A small convolutional head fuses the
concatenated stream logits.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import functional as F
from .nn import BatchNorm2d, Conv2d, ConvBNAct, Module, PReLU
from .tensor import Tensor, concat

OUTPUT_STRIDE = 8
PYRAMID_BINS = (1, 2, 3, 6)
MAX_DECODER_BLOCKS = 3

# Channels after temporal early fusion: pre + post stacks for Sentinel-1/2, post-only VHR.
SENSOR_CHANNELS = {"s1": 6, "s2": 20, "vhr": 3}
SENSOR_GSD = {"s1": 5.0, "s2": 10.0, "vhr": 2.0}
SENSOR_INPUTS = {"s1": ("radar_pre", "radar_post"), "s2": ("s2_pre", "s2_post"), "vhr": ("vhr",)}

DESK_WIDTHS = (16, 32, 64, 128)
RESNET34_WIDTHS = (64, 128, 256, 512)
RESNET34_BLOCKS = (3, 4, 6, 3)


@dataclass
class StreamConfig:
    sensor: str
    in_channels: int
    pixels: int
    gsd: float
    widths: tuple = DESK_WIDTHS
    blocks: tuple = (2, 2, 2, 2)
    decoder_width: int | None = None

    def __post_init__(self):
        self.widths = tuple(self.widths)
        self.blocks = tuple(self.blocks)
        if len(self.widths) != 4 or len(self.blocks) != 4:
            raise ValueError("encoder needs exactly four stages")

    @property
    def feature_pixels(self):
        return self.pixels // OUTPUT_STRIDE

    @property
    def bins(self):
        """Pyramid bins that fit the feature map (all four when it is at least 6 px)."""
        return tuple(b for b in PYRAMID_BINS if b <= self.feature_pixels)


def stream_for(sensor, tile_m, gsd=None, **kwargs):
    """StreamConfig for a sensor covering a ``tile_m`` footprint."""
    gsd = SENSOR_GSD[sensor] if gsd is None else gsd
    px = tile_m / gsd
    if not math.isclose(px, round(px)):
        raise ValueError(f"tile {tile_m} m is not a whole number of {gsd} m pixels")
    return StreamConfig(sensor, SENSOR_CHANNELS[sensor], int(round(px)), gsd, **kwargs)


@dataclass
class FusionConfig:
    streams: list
    tile_m: float
    common_gsd: float | None = None
    num_classes: int = 2
    fusion_width: int = 16

    def __post_init__(self):
        self.streams = [s if isinstance(s, StreamConfig) else StreamConfig(**s) for s in self.streams]
        if not self.streams:
            raise ValueError("at least one stream must be active")
        names = [s.sensor for s in self.streams]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate streams: {names}")
        if self.common_gsd is None:
            self.common_gsd = 2.0 if "vhr" in names else 10.0

    @property
    def common_pixels(self):
        px = self.tile_m / self.common_gsd
        if not math.isclose(px, round(px)):
            raise ValueError(f"tile {self.tile_m} m is not a whole number of {self.common_gsd} m pixels")
        return int(round(px))

    @property
    def sensors(self):
        return [s.sensor for s in self.streams]

    def to_dict(self):
        d = asdict(self)
        d["streams"] = [asdict(s) for s in self.streams]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["streams"] = [StreamConfig(**s) for s in d["streams"]]
        return cls(**d)


def decoder_plan(feature_px, common_px):
    """(upsample blocks, needs final resize) that take features to the common grid.

    Uses log2(common / feature) blocks when that is a whole number (capped at
    three); otherwise the nearest lower count followed by a bilinear resize.
    """
    ratio = common_px / feature_px
    if ratio < 1:
        return 0, True
    blocks = min(int(math.floor(math.log2(ratio) + 1e-9)), MAX_DECODER_BLOCKS)
    return blocks, feature_px * 2 ** blocks != common_px


class BasicBlock(Module):
    def __init__(self, cin, cout, stride=1, dilation=1, rng=None):
        self.conv1 = Conv2d(cin, cout, 3, stride, dilation, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(cout)
        self.act1 = PReLU(cout)
        self.conv2 = Conv2d(cout, cout, 3, 1, dilation, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.down_conv = Conv2d(cin, cout, 1, stride, padding=0, bias=False, rng=rng)
            self.down_bn = BatchNorm2d(cout)
        else:
            self.down_conv = None
        self.act2 = PReLU(cout)

    def forward(self, x):
        out = self.bn2(self.conv2(self.act1(self.bn1(self.conv1(x)))))
        short = x if self.down_conv is None else self.down_bn(self.down_conv(x))
        return self.act2(out + short)


class Encoder(Module):
    """Residual encoder with total stride 8: stem /2, stage 1 /2, stage 2 /2,
    stages 3 and 4 at stride 1 with dilation 2 and 4."""

    STAGE_STRIDES = (2, 2, 1, 1)
    STAGE_DILATIONS = (1, 1, 2, 4)

    def __init__(self, cfg, rng):
        w = cfg.widths
        self.stem = ConvBNAct(cfg.in_channels, w[0], 3, stride=2, rng=rng)
        stages, cin = [], w[0]
        for width, n, stride, dil in zip(w, cfg.blocks, self.STAGE_STRIDES, self.STAGE_DILATIONS):
            for i in range(n):
                stages.append(BasicBlock(cin, width, stride if i == 0 else 1, dil, rng))
                cin = width
        self.blocks = stages
        self.out_channels = cin

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % OUTPUT_STRIDE or w % OUTPUT_STRIDE:
            ph, pw = (-h) % OUTPUT_STRIDE, (-w) % OUTPUT_STRIDE
            raise ValueError(f"input {h}x{w} is not divisible by {OUTPUT_STRIDE}; "
                             f"pad by {ph} rows and {pw} columns")
        x = self.stem(x)
        for block in self.blocks:
            x = block(x)
        return x


class ContextModule(Module):
    """Pyramid pooling: pool at each bin size, 1x1 conv-BN-PReLU, upsample, concatenate."""

    def __init__(self, channels, bins, rng):
        if not bins:
            raise ValueError("feature map too small for any pyramid bin")
        self.bins = tuple(bins)
        reduced = max(channels // len(self.bins), 1)
        self.branches = [ConvBNAct(channels, reduced, 1, rng=rng) for _ in self.bins]
        self.out_channels = channels + reduced * len(self.bins)

    def branch(self, x, i):
        h, w = x.shape[-2:]
        pooled = F.adaptive_avg_pool(x, self.bins[i])
        return F.resize_bilinear(self.branches[i](pooled), (h, w))

    def forward(self, x):
        return concat([x] + [self.branch(x, i) for i in range(len(self.bins))], axis=1)


class Decoder(Module):
    """``n_blocks`` x (x2 bilinear upsample -> 3x3 conv-BN-PReLU), then 1x1 conv to logits."""

    def __init__(self, cin, n_blocks, num_classes, base_width, rng):
        self.n_blocks = n_blocks
        blocks = []
        width = base_width
        for _ in range(n_blocks):
            blocks.append(ConvBNAct(cin, width, 3, rng=rng))
            cin, width = width, max(width // 2, 8)
        self.blocks = blocks
        self.classifier = Conv2d(cin, num_classes, 1, padding=0, rng=rng)

    def forward(self, x):
        for block in self.blocks:
            x = block(F.upsample(x, 2))
        return self.classifier(x)


class Stream(Module):
    def __init__(self, cfg, common_px, num_classes, rng):
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.context = ContextModule(self.encoder.out_channels, cfg.bins, rng)
        self.n_blocks, self.resize = decoder_plan(cfg.feature_pixels, common_px)
        base = cfg.decoder_width or max(self.encoder.out_channels // 2, 8)
        self.decoder = Decoder(self.context.out_channels, self.n_blocks, num_classes, base, rng)
        self.common_px = common_px

    def forward(self, x):
        logits = self.decoder(self.context(self.encoder(x)))
        if self.resize:
            logits = F.resize_bilinear(logits, (self.common_px, self.common_px))
        return logits


class FusionHead(Module):
    """Concatenated stream logits -> 3x3 conv + PReLU -> 3x3 conv + PReLU -> 1x1 conv."""

    def __init__(self, n_streams, num_classes, width, rng):
        cin = n_streams * num_classes
        self.conv1 = Conv2d(cin, width, 3, rng=rng)
        self.act1 = PReLU(width)
        self.conv2 = Conv2d(width, width, 3, rng=rng)
        self.act2 = PReLU(width)
        self.out = Conv2d(width, num_classes, 1, padding=0, rng=rng)
        self.n_streams = n_streams
        self.num_classes = num_classes

    def init_passthrough(self):
        """Set weights so the head outputs the sum of the stream logits
        (the identity for a single stream)."""
        cin = self.n_streams * self.num_classes
        width = self.conv1.out_channels
        if width < cin:
            raise ValueError(f"fusion width {width} < {cin} input channels; cannot pass through")
        for conv in (self.conv1, self.conv2):
            conv.weight.data[...] = 0
            conv.bias.data[...] = 0
            c = conv.kernel_size // 2
            for i in range(cin):
                conv.weight.data[i, i, c, c] = 1
        for act in (self.act1, self.act2):
            act.slope.data[...] = 1
        self.out.weight.data[...] = 0
        self.out.bias.data[...] = 0
        for s in range(self.n_streams):
            for k in range(self.num_classes):
                self.out.weight.data[k, s * self.num_classes + k, 0, 0] = 1

    def forward(self, stacked):
        return self.out(self.act2(self.conv2(self.act1(self.conv1(stacked)))))


class FusionNet(Module):
    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        common = cfg.common_pixels
        self.streams = {s.sensor: Stream(s, common, cfg.num_classes, rng) for s in cfg.streams}
        self.head = FusionHead(len(cfg.streams), cfg.num_classes, cfg.fusion_width, rng)

    def stream_logits(self, inputs):
        missing = [s for s in self.streams if s not in inputs]
        if missing:
            raise KeyError(f"missing inputs for streams {missing}")
        return [self.streams[s](_as_tensor(inputs[s])) for s in self.streams]

    def forward(self, inputs):
        return fuse(self.stream_logits(inputs), self.head)

    def metadata(self):
        return {
            "format_version": 1,
            "fusion": self.cfg.to_dict(),
            "streams": {
                name: {"bins": list(st.context.bins), "decoder_blocks": st.n_blocks,
                       "final_resize": bool(st.resize), "encoder_channels": st.encoder.out_channels}
                for name, st in self.streams.items()
            },
            "normalization": "batchnorm: batch statistics in train mode, running statistics in eval mode",
        }


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def encode(x, encoder):
    return encoder(_as_tensor(x))


def context_module(features, module):
    return module(_as_tensor(features))


def decode(features, decoder):
    return decoder(_as_tensor(features))


def fuse(stream_logits, head):
    """Late fusion of per-stream logits on the common grid."""
    if not stream_logits:
        raise ValueError("fuse needs at least one stream")
    n = stream_logits[0].shape[0]
    if any(t.shape[0] != n for t in stream_logits):
        raise ValueError(f"batch sizes differ across streams: {[t.shape[0] for t in stream_logits]}")
    size = stream_logits[0].shape[-2:]
    aligned = [t if t.shape[-2:] == size else F.resize_bilinear(t, size) for t in stream_logits]
    return head(concat(aligned, axis=1) if len(aligned) > 1 else aligned[0])


def early_fuse_temporal(pre, post):
    """Channel-concatenate a pre-event and a post-event image (pre first)."""
    if pre.shape[-2:] != post.shape[-2:]:
        raise ValueError(f"pre {pre.shape[-2:]} and post {post.shape[-2:]} differ spatially")
    if isinstance(pre, Tensor) or isinstance(post, Tensor):
        return concat([_as_tensor(pre), _as_tensor(post)], axis=1 if pre.ndim == 4 else 0)
    return np.concatenate([pre, post], axis=-3)


def extend_input_channels(weights, target):
    """Grow a 3-channel first-layer kernel to ``target`` input channels.

    Channels 0-2 are kept; every extra channel is the mean of the three.
    """
    weights = np.asarray(weights)
    if weights.shape[1] != 3:
        raise ValueError(f"expected a kernel with 3 input channels, got {weights.shape}")
    if target < 3:
        raise ValueError(f"target channel count must be >= 3, got {target}")
    mean = weights.mean(axis=1, keepdims=True)
    return np.concatenate([weights] + [mean] * (target - 3), axis=1)
