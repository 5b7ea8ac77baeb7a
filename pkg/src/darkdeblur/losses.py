"""Training objectives for the deblurring generator and its discriminator.

Four generator-side terms: L1 reconstruction, multi-scale structural
dissimilarity, perceptual feature distance through a frozen extractor, and
a cross-entropy adversarial term.  ``total_loss`` combines them as
``L_R + L_S + lambda_f * L_F + lambda_g * L_G``.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

# canonical multi-scale SSIM constants
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

_EPS = 1e-7


class ExtractorUnavailableError(RuntimeError):
    """Raised when the pretrained perceptual backbone cannot be loaded."""


@dataclass
class LossWeights:
    """Mixing weights for the perceptual and adversarial terms."""

    lambda_f: float = 1e-2
    lambda_g: float = 1e-4

    def __post_init__(self):
        if self.lambda_f < 0 or self.lambda_g < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    """Per-term scalars plus their weighted sum."""

    reconstruction: torch.Tensor
    structure: torch.Tensor
    perceptual: torch.Tensor
    adversarial: torch.Tensor
    total: torch.Tensor


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def reconstruction_loss(output, reference):
    """Mean absolute difference over all elements."""
    _check_same_shape(output, reference)
    return (output - reference).abs().mean()


def gaussian_window(win_size, sigma, dtype=torch.float32, device=None):
    """Normalised 2D Gaussian window of shape (win_size, win_size)."""
    coords = torch.arange(win_size, dtype=dtype, device=device) - (win_size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def _ssim_maps(x, y, window):
    """Per-pixel SSIM and contrast-structure maps (valid convolution).

    Built so that bitwise-identical inputs give numerators equal to
    denominators, hence maps of exact ones.
    """
    channels = x.shape[1]
    w = window.expand(channels, 1, -1, -1)
    mu_x = F.conv2d(x, w, groups=channels)
    mu_y = F.conv2d(y, w, groups=channels)
    var_x = F.conv2d(x * x, w, groups=channels) - mu_x * mu_x
    var_y = F.conv2d(y * y, w, groups=channels) - mu_y * mu_y
    cov = F.conv2d(x * y, w, groups=channels) - mu_x * mu_y
    lum = (2 * mu_x * mu_y + SSIM_C1) / (mu_x * mu_x + mu_y * mu_y + SSIM_C1)
    cs = (2 * cov + SSIM_C2) / (var_x + var_y + SSIM_C2)
    return lum * cs, cs


def ms_ssim(output, reference, win_size=11, sigma=1.5, weights=MS_SSIM_WEIGHTS):
    """Multi-scale SSIM over dyadic scales.

    Contrast-structure means are taken at every scale, the full SSIM mean
    only at the coarsest, and the results combine as a weighted geometric
    mean.  When the input cannot support all ``len(weights)`` scales at the
    given window size, the largest feasible count is used with the leading
    weights renormalised.
    """
    _check_same_shape(output, reference)
    if output.dim() != 4:
        raise ValueError(f"expected (B, C, H, W) input, got {tuple(output.shape)}")
    side = min(output.shape[2], output.shape[3])
    feasible = 0
    while feasible < len(weights) and side >= win_size:
        feasible += 1
        side //= 2
    if feasible == 0:
        raise ValueError(
            f"image side {min(output.shape[2:])} is smaller than the "
            f"{win_size}x{win_size} window; reduce win_size")

    window = gaussian_window(win_size, sigma, output.dtype, output.device)
    wts = torch.tensor(weights[:feasible], dtype=output.dtype, device=output.device)
    wts = wts / wts.sum()

    x, y = output, reference
    levels = []
    for i in range(feasible):
        ssim_map, cs_map = _ssim_maps(x, y, window)
        if i < feasible - 1:
            levels.append(cs_map.mean())
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
        else:
            levels.append(ssim_map.mean())
    # negative contrast terms are floored before the fractional powers; the
    # small positive floor keeps pow() differentiable (0**w has infinite slope)
    stack = torch.stack(levels).clamp(min=1e-8)
    return torch.prod(stack ** wts)


def structure_loss(output, reference, win_size=11):
    """1 − MS-SSIM; zero exactly for identical inputs."""
    return 1 - ms_ssim(output, reference, win_size=win_size)


def perceptual_feature_loss(output, reference, extractor):
    """L1 distance between extractor features, normalised by element count."""
    _check_same_shape(output, reference)
    return (extractor(output) - extractor(reference)).abs().mean()


def adversarial_generator_loss(d_fake):
    """Mean of −log(p) over the discriminator's map, p clamped to (0, 1)."""
    p = d_fake.clamp(_EPS, 1 - _EPS)
    return (-torch.log(p)).mean()


def discriminator_loss(d_real, d_fake):
    """Halved binary cross-entropy against targets 1 (real) and 0 (fake)."""
    pr = d_real.clamp(_EPS, 1 - _EPS)
    pf = d_fake.clamp(_EPS, 1 - _EPS)
    return 0.5 * ((-torch.log(pr)).mean() + (-torch.log(1 - pf)).mean())


def total_loss(output, reference, d_fake, extractor, weights=None, win_size=11):
    """All four generator terms combined into a LossBreakdown."""
    w = weights if weights is not None else LossWeights()
    rec = reconstruction_loss(output, reference)
    struct = structure_loss(output, reference, win_size=win_size)
    perc = perceptual_feature_loss(output, reference, extractor)
    adv = adversarial_generator_loss(d_fake)
    total = rec + struct + w.lambda_f * perc + w.lambda_g * adv
    return LossBreakdown(rec, struct, perc, adv, total)


class IdentityFeatures(nn.Module):
    """Pass-through extractor: features are the raw pixels.

    Makes the perceptual term coincide with the reconstruction term; used
    for tests and for training without the pretrained backbone.
    """

    def forward(self, x):
        return x


class Vgg19Features(nn.Module):
    """Frozen deep-classifier features at the deepest conv stage (relu5_4).

    Inputs are expected in [0, 1] RGB and are normalised with the
    backbone's training statistics before extraction.
    """

    def __init__(self):
        super().__init__()
        try:
            from torchvision.models import VGG19_Weights, vgg19
            backbone = vgg19(weights=VGG19_Weights.IMAGENET1K_V1)
        except Exception as exc:  # noqa: BLE001 - download/socket errors vary
            raise ExtractorUnavailableError(
                "pretrained VGG19 weights are unavailable; download "
                "vgg19-dcbb9e9d.pth (torchvision IMAGENET1K_V1) into "
                "$TORCH_HOME/hub/checkpoints or use the 'identity' extractor"
            ) from exc
        self.features = backbone.features[:36]
        self.features.eval()
        for p in self.features.parameters():
            p.requires_grad_(False)
        self.register_buffer(
            "mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer(
            "std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))

    def train(self, mode=True):  # keep the frozen stack in eval mode
        return super().train(False)

    def forward(self, x):
        return self.features((x - self.mean) / self.std)


FEATURE_EXTRACTORS = ("identity", "vgg19")


def make_feature_extractor(name, device=None):
    """Build a named perceptual extractor ('identity' or 'vgg19')."""
    if name == "identity":
        module = IdentityFeatures()
    elif name == "vgg19":
        module = Vgg19Features()
    else:
        raise ValueError(
            f"unknown feature extractor {name!r}; choose from {FEATURE_EXTRACTORS}")
    if device is not None:
        module = module.to(device)
    return module
