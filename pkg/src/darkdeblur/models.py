"""Generator and discriminator networks for low-light single-shot deblurring.

The generator is a four-level feature pyramid assembled from dense-attention
blocks.  Encoder features cross into the decoder through contextual gates,
and the network predicts a residual on top of the blurry input, so with a
zero-initialised tail it starts out as the identity map.
"""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class GeneratorConfig:
    """Channel layout of the generator pyramid.

    ``feature_levels`` are the widths of the four pyramid levels (strictly
    increasing); ``gate_widths`` are the widths of the three gated skip
    connections and must equal the first three feature levels.
    """

    feature_levels: tuple[int, ...] = (64, 128, 192, 256)
    gate_widths: tuple[int, ...] = (64, 128, 192)
    dense_layers: int = 5
    dense_growth: int = 32
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.feature_levels = tuple(int(w) for w in self.feature_levels)
        self.gate_widths = tuple(int(w) for w in self.gate_widths)
        if len(self.feature_levels) != 4:
            raise ValueError("feature_levels must have exactly 4 entries")
        if any(b <= a for a, b in zip(self.feature_levels, self.feature_levels[1:])):
            raise ValueError("feature_levels must be strictly increasing")
        if len(self.gate_widths) != 3:
            raise ValueError("gate_widths must have exactly 3 entries")
        if self.gate_widths != self.feature_levels[:3]:
            raise ValueError("gate_widths must match the first three feature levels")
        if self.dense_layers < 1:
            raise ValueError("dense_layers must be positive")
        if self.dense_growth <= 0:
            raise ValueError("dense_growth must be positive")


@dataclass
class DiscriminatorConfig:
    """Layer plan of the conditional patch discriminator."""

    base_width: int = 64
    num_blocks: int = 6

    def __post_init__(self):
        if self.base_width < 1 or self.num_blocks < 1:
            raise ValueError("base_width and num_blocks must be positive")


class DenseBlock(nn.Module):
    """Densely connected 3x3 convolution stack.

    Each layer consumes the concatenation of the block input and every
    previous layer output; a final 1x1 fusion convolution projects the full
    concatenation back to the input width so the block composes residually.
    """

    def __init__(self, channels, num_layers=5, growth=32, leaky_slope=0.2):
        super().__init__()
        self.layers = nn.ModuleList(
            nn.Conv2d(channels + i * growth, growth, 3, padding=1)
            for i in range(num_layers)
        )
        self.fuse = nn.Conv2d(channels + num_layers * growth, channels, 1)
        self.act = nn.LeakyReLU(leaky_slope)

    def forward(self, x):
        feats = [x]
        for conv in self.layers:
            feats.append(self.act(conv(torch.cat(feats, dim=1))))
        return self.fuse(torch.cat(feats, dim=1))


class ChannelAttention(nn.Module):
    """Channel gate computed from the block input.

    Global average pooling squeezes the input into per-channel descriptors;
    a squeeze/excite pair of 1x1 convolutions with ReLU and sigmoid produces
    scaling factors in (0, 1) that rescale the input channels.
    """

    def __init__(self, channels, reduction=16):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.squeeze = nn.Conv2d(channels, hidden, 1)
        self.excite = nn.Conv2d(hidden, channels, 1)

    def factors(self, x):
        """Per-channel scaling factors, shape (B, C, 1, 1), each in (0, 1)."""
        z = F.adaptive_avg_pool2d(x, 1)
        return torch.sigmoid(self.excite(F.relu(self.squeeze(z))))

    def forward(self, x):
        return x * self.factors(x)


class DenseAttentionBlock(nn.Module):
    """Dense stack plus input-anchored channel attention, summed.

    The attention branch reads the block *input* (not the dense output) and
    joins as a residual path, so channel statistics travel past the dense
    stack unchanged.  With ``use_attention=False`` the block degrades to a
    plain dense block.
    """

    def __init__(self, channels, num_layers=5, growth=32, leaky_slope=0.2,
                 use_attention=True, reduction=16):
        super().__init__()
        self.dense = DenseBlock(channels, num_layers, growth, leaky_slope)
        self.attention = ChannelAttention(channels, reduction) if use_attention else None

    def forward(self, x):
        out = self.dense(x)
        if self.attention is not None:
            out = out + self.attention(x)
        return out


class ContextualGate(nn.Module):
    """Gated skip connection.

    Two parallel 3x3 convolutions over the same input: a LeakyReLU feature
    branch multiplied elementwise by a sigmoid mask branch, so only salient
    skip features propagate to the decoder.
    """

    def __init__(self, in_channels, out_channels, leaky_slope=0.2):
        super().__init__()
        self.feature = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.gate = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.leaky_slope = leaky_slope

    def forward(self, x):
        return F.leaky_relu(self.feature(x), self.leaky_slope) * torch.sigmoid(self.gate(x))


class Downsample(nn.Module):
    """Strided 3x3 convolution to the next pyramid width; halves H and W."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class PixelShuffleUpsample(nn.Module):
    """Sub-pixel upsampling: conv to 4x the target width, depth-to-space by
    2, then PReLU.  Chosen over transposed convolution to avoid checkerboard
    artifacts."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, 4 * out_channels, 3, padding=1)
        self.shuffle = nn.PixelShuffle(2)
        self.act = nn.PReLU()

    def forward(self, x):
        return self.act(self.shuffle(self.conv(x)))


class DarkDeblurNet(nn.Module):
    """Residual deblurring generator mapping [0,1] RGB to [0,1] RGB.

    A head convolution lifts the input to the first pyramid width.  The
    encoder applies a dense-attention block then a strided transition at
    each of the first three levels; the fourth level is the bottleneck
    block.  The decoder mirrors the encoder with pixel-shuffle upsampling,
    adds the gated encoder features, and refines with another block per
    level.  A zero-initialised tail predicts the residual, so a freshly
    constructed network is exactly the identity after clamping.

    ``channel_attention`` and ``contextual_gates`` switch the two optional
    components off for the reduced model variants; with gates off the skip
    connections become plain pass-throughs.
    """

    DIVISOR = 8  # three stride-2 descents

    def __init__(self, config=None, channel_attention=True, contextual_gates=True):
        super().__init__()
        cfg = config if config is not None else GeneratorConfig()
        self.config = cfg
        self.channel_attention = channel_attention
        self.contextual_gates = contextual_gates

        widths = cfg.feature_levels

        def block(channels):
            return DenseAttentionBlock(
                channels, cfg.dense_layers, cfg.dense_growth, cfg.leaky_slope,
                use_attention=channel_attention)

        self.head = nn.Conv2d(3, widths[0], 3, padding=1)
        self.enc_blocks = nn.ModuleList(block(widths[i]) for i in range(3))
        self.downs = nn.ModuleList(Downsample(widths[i], widths[i + 1]) for i in range(3))
        self.bottleneck = block(widths[3])
        self.ups = nn.ModuleList(
            PixelShuffleUpsample(widths[i + 1], widths[i]) for i in reversed(range(3)))
        if contextual_gates:
            self.skips = nn.ModuleList(
                ContextualGate(widths[i], cfg.gate_widths[i], cfg.leaky_slope)
                for i in reversed(range(3)))
        else:
            self.skips = nn.ModuleList(nn.Identity() for _ in range(3))
        self.dec_blocks = nn.ModuleList(block(widths[i]) for i in reversed(range(3)))
        self.tail = nn.Conv2d(widths[0], 3, 3, padding=1)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] % self.DIVISOR or x.shape[3] % self.DIVISOR:
            raise ValueError(
                f"H and W must be divisible by {self.DIVISOR}; use restore() "
                f"for arbitrary sizes (got {tuple(x.shape[2:])})")

        h = self.head(x)
        encoded = []
        for blk, down in zip(self.enc_blocks, self.downs):
            h = blk(h)
            encoded.append(h)
            h = down(h)
        h = self.bottleneck(h)
        for up, gate, blk, skip in zip(self.ups, self.skips, self.dec_blocks,
                                       reversed(encoded)):
            h = up(h)
            h = blk(h + gate(skip))
        out = torch.clamp(x + self.tail(h), 0.0, 1.0)
        if not torch.isfinite(out).all():
            raise RuntimeError("non-finite values in generator output")
        return out

    @torch.no_grad()
    def restore(self, x):
        """Inference on arbitrary sizes: reflect-pad H and W up to the next
        multiple of 8, run the network, and crop back."""
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        h, w = x.shape[2], x.shape[3]
        pad_h = (-h) % self.DIVISOR
        pad_w = (-w) % self.DIVISOR
        if pad_h or pad_w:
            # reflect padding needs pad < dim; tiny inputs fall back to replicate
            mode = "reflect" if pad_h < h and pad_w < w else "replicate"
            x = F.pad(x, (0, pad_w, 0, pad_h), mode=mode)
        out = self.forward(x)
        return out[:, :, :h, :w]


class ConditionalDiscriminator(nn.Module):
    """Patch discriminator over (candidate, condition) image pairs.

    The pair is concatenated channelwise into a 6-channel input and pushed
    through a 3x3 conv stack with batch normalisation and swish.  Odd layers
    (1st, 3rd, 5th, ...) use stride 2 and double the width along the chain
    starting from ``base_width``; a 1x1 convolution with sigmoid produces
    the patch probability map.
    """

    def __init__(self, config=None):
        super().__init__()
        cfg = config if config is not None else DiscriminatorConfig()
        self.config = cfg

        layers = []
        in_ch = 6
        width = cfg.base_width
        for i in range(1, cfg.num_blocks + 1):
            stride = 2 if i % 2 == 1 else 1
            if i % 2 == 1:
                width *= 2
            layers += [
                nn.Conv2d(in_ch, width, 3, stride=stride, padding=1),
                nn.BatchNorm2d(width),
                nn.SiLU(),
            ]
            in_ch = width
        self.features = nn.Sequential(*layers)
        self.head = nn.Conv2d(width, 1, 1)

    def forward(self, candidate, condition):
        if candidate.shape != condition.shape:
            raise ValueError(
                f"candidate and condition shapes differ: "
                f"{tuple(candidate.shape)} vs {tuple(condition.shape)}")
        x = torch.cat([candidate, condition], dim=1)
        return torch.sigmoid(self.head(self.features(x)))


def count_parameters(module):
    """Number of trainable parameters of a module (0 for ``None``)."""
    if module is None:
        return 0
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
