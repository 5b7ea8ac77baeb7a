"""Synthetic camera-shake blur: I_B = K(M) * I_S + N.

A first-order Markov walk produces a continuous 2D shake trajectory, the
trajectory is splatted into a normalised blur kernel, the kernel is
convolved with the sharp image under reflective padding, and Gaussian
sensor noise tops it off.

All randomness flows through an explicit ``numpy.random.Generator``
backed by the PCG64 bit generator (the fixed algorithm this module's
determinism contract is stated against); build one with ``make_rng``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d


@dataclass
class SynthConfig:
    """Knobs of the blur synthesis pipeline.

    ``max_anxiety`` is the standard deviation of the per-step Gaussian
    velocity perturbation, in pixels; ``None`` resolves to
    ``0.005 * canvas_size``.  ``noise_sigma_range`` bounds the uniform draw
    of the additive-noise sigma in [0,1] intensity units.
    """

    canvas_size: int = 31
    traj_samples: int = 250
    impulse_prob: float = 0.005
    inertia: float = 0.7
    max_anxiety: float | None = None
    noise_sigma_range: tuple[float, float] = (0.0, 0.02)
    seed: int = 0

    def __post_init__(self):
        if self.canvas_size % 2 == 0 or not 3 <= self.canvas_size <= 65:
            raise ValueError("canvas_size must be odd and within [3, 65]")
        if self.traj_samples < 2:
            raise ValueError("traj_samples must be at least 2")
        if not 0 <= self.impulse_prob <= 1:
            raise ValueError("impulse_prob must lie in [0, 1]")
        if not 0 <= self.inertia <= 1:
            raise ValueError("inertia must lie in [0, 1]")
        if self.max_anxiety is None:
            self.max_anxiety = 0.005 * self.canvas_size
        if self.max_anxiety < 0:
            raise ValueError("max_anxiety must be non-negative")
        lo, hi = self.noise_sigma_range
        if lo < 0 or lo > hi:
            raise ValueError("noise_sigma_range must satisfy 0 <= lo <= hi")
        self.noise_sigma_range = (float(lo), float(hi))


@dataclass
class MotionTrajectory:
    """Continuous shake path in canvas pixel coordinates, shape (N, 2)."""

    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must have shape (N, 2)")
        if len(self.positions) < 2:
            raise ValueError("a trajectory needs at least 2 samples")
        if not np.isfinite(self.positions).all():
            raise ValueError("trajectory contains non-finite coordinates")

    @property
    def length(self):
        return len(self.positions)

    def span(self):
        """(span_x, span_y): coordinate extents of the path."""
        ext = self.positions.max(axis=0) - self.positions.min(axis=0)
        return float(ext[0]), float(ext[1])


@dataclass
class BlurKernel:
    """Normalised non-negative k x k point-spread function, k odd."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        k = self.weights.shape[0]
        if self.weights.ndim != 2 or self.weights.shape[1] != k:
            raise ValueError("kernel must be square")
        if k % 2 == 0 or not 3 <= k <= 65:
            raise ValueError("kernel size must be odd and within [3, 65]")
        if (self.weights < 0).any():
            raise ValueError("kernel weights must be non-negative")
        if abs(self.weights.sum() - 1.0) > 1e-6:
            raise ValueError("kernel weights must sum to 1")

    @property
    def size(self):
        return self.weights.shape[0]


@dataclass
class SynthResult:
    """A synthesized pair plus the diagnostics that produced it."""

    blurry: np.ndarray
    sharp: np.ndarray
    kernel: BlurKernel
    noise_sigma: float


def make_rng(*entropy):
    """Seeded PCG64 generator; pass (seed,) or (seed, epoch, index, ...)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def sample_trajectory(cfg, rng):
    """First-order Markov shake path, recentered and shrunk to the canvas.

    Velocity update per step: keep ``inertia`` of the previous velocity,
    add an isotropic Gaussian kick of scale ``max_anxiety``, and with
    probability ``impulse_prob`` reverse with a random magnitude (an
    abrupt hand jerk).  The accumulated path is translated so its bounding
    box sits at the canvas centre and scaled down (never up) to fit.
    """
    n = cfg.traj_samples
    velocity = rng.normal(0.0, cfg.max_anxiety, size=2)
    positions = np.zeros((n, 2))
    for t in range(1, n):
        velocity = cfg.inertia * velocity + rng.normal(0.0, cfg.max_anxiety, size=2)
        if rng.random() < cfg.impulse_prob:
            velocity = -velocity * (0.5 + rng.random())
        positions[t] = positions[t - 1] + velocity

    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    span = float((hi - lo).max())
    limit = cfg.canvas_size - 1
    scale = limit / span if span > limit else 1.0
    centre = (cfg.canvas_size - 1) / 2
    positions = (positions - (lo + hi) / 2) * scale + centre
    # guard against float drift past the canvas edge
    np.clip(positions, 0.0, limit, out=positions)
    return MotionTrajectory(positions)


def rasterize_kernel(traj, size):
    """Splat each trajectory sample onto its 4 nearest pixels (bilinear
    weights), then normalise to unit mass.

    Positions are absolute canvas coordinates with (x, y) order mapping to
    (column, row); no recentering happens here.
    """
    if size % 2 == 0 or size < 3:
        raise ValueError("kernel size must be odd and >= 3")
    pos = traj.positions
    if (pos < 0).any() or (pos > size - 1).any():
        raise RuntimeError("trajectory exceeds the kernel canvas")

    x, y = pos[:, 0], pos[:, 1]
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    fx = x - x0
    fy = y - y0
    # fractional parts are 0 whenever floor+1 would fall off the edge, so
    # clipping the high index never misplaces real mass
    x1 = np.minimum(x0 + 1, size - 1)
    y1 = np.minimum(y0 + 1, size - 1)

    weights = np.zeros((size, size))
    np.add.at(weights, (y0, x0), (1 - fx) * (1 - fy))
    np.add.at(weights, (y0, x1), fx * (1 - fy))
    np.add.at(weights, (y1, x0), (1 - fx) * fy)
    np.add.at(weights, (y1, x1), fx * fy)
    return BlurKernel(weights / weights.sum())


def apply_blur(sharp, kernel):
    """Per-channel 2D convolution with reflective padding.

    Direct (non-FFT) convolution in double precision; a delta kernel
    reproduces the input bit-exactly.
    """
    img = np.asarray(sharp)
    if img.ndim != 3:
        raise ValueError(f"expected (C, H, W) image, got shape {img.shape}")
    if img.min() < 0 or img.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    k = kernel.size
    pad = k // 2
    if k > img.shape[1] or k > img.shape[2]:
        raise ValueError(
            f"kernel size {k} exceeds image size {img.shape[1]}x{img.shape[2]}")

    out = np.empty(img.shape, dtype=np.float64)
    for c in range(img.shape[0]):
        padded = np.pad(img[c].astype(np.float64), pad, mode="reflect")
        out[c] = convolve2d(padded, kernel.weights, mode="valid")
    np.clip(out, 0.0, 1.0, out=out)
    return out.astype(img.dtype)


def add_noise(img, sigma, rng):
    """Additive zero-mean Gaussian noise, clamped back to [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    img = np.asarray(img)
    noisy = img.astype(np.float64) + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(noisy, 0.0, 1.0).astype(img.dtype)


def synthesize_pair(sharp, cfg, rng):
    """Full pipeline: trajectory -> kernel -> blur -> noise.

    The noise sigma is drawn uniformly from ``cfg.noise_sigma_range``.
    """
    traj = sample_trajectory(cfg, rng)
    kernel = rasterize_kernel(traj, cfg.canvas_size)
    blurred = apply_blur(sharp, kernel)
    sigma = float(rng.uniform(*cfg.noise_sigma_range))
    blurry = add_noise(blurred, sigma, rng)
    return SynthResult(blurry=blurry, sharp=sharp, kernel=kernel, noise_sigma=sigma)
