"""Data preparation: patch extraction, pair alignment, training stream.

Two kinds of training source are supported: a directory of sharp images
(blur is synthesized on the fly, one kernel per source image per epoch)
and a manifest of real blurry/sharp pairs.  Epoch order and all synthesis
randomness are pure functions of (seed, epoch, image index), so any step
of the stream can be reconstructed without replaying earlier epochs.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch

from . import images
from .blursynth import make_rng, synthesize_pair

log = logging.getLogger(__name__)

# alignment constants: nearest-neighbour ratio test, RANSAC reprojection
# threshold (px), minimum inliers, and the low-confidence flag threshold
MATCH_RATIO = 0.75
RANSAC_THRESHOLD = 3.0
MIN_INLIERS = 4
LOW_CONFIDENCE_PX = 1.5
# crop edges within this distance of an integer snap to it, so identity
# warps keep the full frame
CROP_SNAP = 0.05


class AlignmentError(RuntimeError):
    """Raised when a pair cannot be aligned (too few confident matches)."""


class EmptyDatasetError(ValueError):
    """Raised when a data source yields no usable images."""


@dataclass
class PatchSpec:
    """Patch geometry; the default stride equals the size (non-overlapping)."""

    size: int = 128
    stride: int | None = None

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("patch size must be positive")
        if self.stride is None:
            self.stride = self.size
        if self.stride < 1:
            raise ValueError("stride must be at least 1")


def patch_grid(height, width, spec):
    """Row-major (top, left) offsets; trailing partial patches discarded."""
    tops = range(0, height - spec.size + 1, spec.stride)
    lefts = range(0, width - spec.size + 1, spec.stride)
    return [(t, l) for t in tops for l in lefts]


def extract_patches(img, spec):
    """Slice a (C, H, W) image into a row-major list of square patches."""
    offsets = patch_grid(img.shape[1], img.shape[2], spec)
    return [img[:, t:t + spec.size, l:l + spec.size] for t, l in offsets]


@dataclass
class DatasetManifest:
    """Pairs of (blurry_path, sharp_path) plus identifying tags."""

    entries: list
    split: str = "train"
    source: str = ""

    def __post_init__(self):
        self.entries = [(Path(b), Path(s)) for b, s in self.entries]


def load_manifest(path, split="train", source=None):
    """Read a tab-separated ``blurry<TAB>sharp`` manifest file."""
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 2 tab-separated paths")
        entries.append(tuple(parts))
    return DatasetManifest(entries, split=split,
                           source=source if source is not None else str(path))


def save_manifest(path, manifest):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{b}\t{s}" for b, s in manifest.entries]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


@dataclass
class AlignmentResult:
    """Homography (sharp -> blurry frame) and alignment diagnostics."""

    homography: np.ndarray
    inlier_count: int
    mean_reprojection_error: float
    crop_window: tuple  # (top, left, height, width) in the blurry frame
    low_confidence: bool = False


def _to_gray_u8(img):
    u8 = np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    return cv2.cvtColor(u8, cv2.COLOR_RGB2GRAY)


def _inner_rectangle(corners, height, width):
    """Largest axis-aligned rectangle inside a warped frame's quadrilateral,
    intersected with the target frame."""
    (tlx, tly), (trx, try_), (brx, bry), (blx, bly) = corners
    left = max(tlx, blx, 0.0)
    right = min(trx, brx, float(width))
    top = max(tly, try_, 0.0)
    bottom = min(bly, bry, float(height))

    def snap(v):
        r = round(v)
        return float(r) if abs(v - r) <= CROP_SNAP else v

    left, right = snap(left), snap(right)
    top, bottom = snap(top), snap(bottom)
    l, t = int(np.ceil(left)), int(np.ceil(top))
    r, b = int(np.floor(right)), int(np.floor(bottom))
    if r <= l or b <= t:
        raise AlignmentError("aligned images share no common rectangle")
    return t, l, b - t, r - l


def align_pair(blurry, sharp):
    """Geometrically align a real blurry/sharp pair.

    Scale-invariant keypoints (SIFT) are matched with a ratio test, a
    homography is estimated by RANSAC, and the sharp image is warped into
    the blurry frame — the blurry input stays unresampled.  Both images
    are cropped to the common valid rectangle.

    Returns ``(blurry_cropped, sharp_cropped, AlignmentResult)``.
    """
    sift = cv2.SIFT_create()
    kp_b, des_b = sift.detectAndCompute(_to_gray_u8(blurry), None)
    kp_s, des_s = sift.detectAndCompute(_to_gray_u8(sharp), None)
    if des_b is None or des_s is None or len(kp_b) < MIN_INLIERS or len(kp_s) < MIN_INLIERS:
        raise AlignmentError("too few keypoints for alignment")

    matcher = cv2.BFMatcher(cv2.NORM_L2)
    good = [m for pair in matcher.knnMatch(des_s, des_b, k=2)
            if len(pair) == 2 and pair[0].distance < MATCH_RATIO * pair[1].distance
            for m in pair[:1]]
    if len(good) < MIN_INLIERS:
        raise AlignmentError(f"only {len(good)} confident matches (need {MIN_INLIERS})")

    pts_s = np.float32([kp_s[m.queryIdx].pt for m in good]).reshape(-1, 1, 2)
    pts_b = np.float32([kp_b[m.trainIdx].pt for m in good]).reshape(-1, 1, 2)
    H, mask = cv2.findHomography(pts_s, pts_b, cv2.RANSAC, RANSAC_THRESHOLD)
    if H is None or mask is None or int(mask.sum()) < MIN_INLIERS:
        raise AlignmentError("homography estimation failed")
    H = H / H[2, 2]

    inliers = mask.ravel().astype(bool)
    projected = cv2.perspectiveTransform(pts_s[inliers], H)
    errors = np.linalg.norm(projected - pts_b[inliers], axis=2).ravel()
    mean_err = float(errors.mean())

    h_b, w_b = blurry.shape[1], blurry.shape[2]
    h_s, w_s = sharp.shape[1], sharp.shape[2]
    sharp_hwc = sharp.transpose(1, 2, 0)
    warped = cv2.warpPerspective(sharp_hwc, H, (w_b, h_b), flags=cv2.INTER_LINEAR)

    src_corners = np.float32(
        [[0, 0], [w_s, 0], [w_s, h_s], [0, h_s]]).reshape(-1, 1, 2)
    corners = cv2.perspectiveTransform(src_corners, H).reshape(4, 2)
    top, left, height, width = _inner_rectangle(corners, h_b, w_b)

    result = AlignmentResult(
        homography=H,
        inlier_count=int(mask.sum()),
        mean_reprojection_error=mean_err,
        crop_window=(top, left, height, width),
        low_confidence=mean_err > LOW_CONFIDENCE_PX,
    )
    blurry_crop = blurry[:, top:top + height, left:left + width]
    sharp_crop = warped.transpose(2, 0, 1)[:, top:top + height, left:left + width]
    return blurry_crop, np.ascontiguousarray(sharp_crop), result


def _readable(paths):
    """Filter to decodable images, logging and skipping the rest."""
    good = []
    for p in paths:
        try:
            images.image_size(p)
        except Exception as exc:  # noqa: BLE001 - decoder errors vary
            log.warning("skipping unreadable image %s: %s", p, exc)
            continue
        good.append(p)
    return good


def resolve_source(path):
    """Classify a data source path.

    Returns ``("synth", sharp_paths)`` for a directory of sharp images,
    or ``("pairs", manifest)`` for a manifest file or a directory holding
    mirrored ``blur/`` + ``sharp/`` trees.
    """
    path = Path(path)
    if path.is_file():
        return "pairs", load_manifest(path)
    if not path.is_dir():
        raise FileNotFoundError(f"data source {path} does not exist")
    blur_dir, sharp_dir = path / "blur", path / "sharp"
    if blur_dir.is_dir() and sharp_dir.is_dir():
        entries = []
        for b in images.list_images(blur_dir):
            s = sharp_dir / b.name
            if s.exists():
                entries.append((b, s))
            else:
                log.warning("no sharp counterpart for %s", b)
        return "pairs", DatasetManifest(entries, source=str(path))
    return "synth", images.list_images(path)


class TrainingStream:
    """Deterministic, shuffled stream of (blurry, sharp) patch batches.

    For a sharp-only source each image is blurred once per epoch with a
    kernel and noise draw derived from (seed, epoch, image index); patches
    are then drawn from a per-epoch global shuffle over every patch slot.
    The final partial batch of an epoch is kept.
    """

    def __init__(self, source, spec=None, synth_cfg=None, seed=0, batch_size=16):
        self.spec = spec if spec is not None else PatchSpec()
        self.synth_cfg = synth_cfg
        self.seed = seed
        self.batch_size = batch_size

        kind, payload = resolve_source(source)
        self.kind = kind
        if kind == "synth":
            if synth_cfg is None:
                raise ValueError("a SynthConfig is required for a sharp-only source")
            self.sharp_paths = _readable(payload)
            sizes = [images.image_size(p) for p in self.sharp_paths]
        else:
            self.manifest = payload
            entries = [(b, s) for b, s in payload.entries
                       if _readable([b]) and _readable([s])]
            self.manifest = DatasetManifest(entries, payload.split, payload.source)
            sizes = [images.image_size(s) for _, s in self.manifest.entries]

        counts = [len(patch_grid(h, w, self.spec)) for h, w in sizes]
        keep = [i for i, c in enumerate(counts) if c > 0]
        for i, c in enumerate(counts):
            if c == 0:
                log.warning("image %d smaller than one patch; skipped", i)
        if kind == "synth":
            self.sharp_paths = [self.sharp_paths[i] for i in keep]
        else:
            self.manifest = DatasetManifest(
                [self.manifest.entries[i] for i in keep],
                self.manifest.split, self.manifest.source)
        self.patch_counts = [counts[i] for i in keep]
        self.cum_counts = np.cumsum([0] + self.patch_counts)
        self.num_patches = int(self.cum_counts[-1])
        if self.num_patches == 0:
            raise EmptyDatasetError("data source contains no usable images")

    @property
    def num_images(self):
        return len(self.patch_counts)

    @property
    def batches_per_epoch(self):
        return -(-self.num_patches // self.batch_size)

    def epoch_order(self, epoch):
        """Global patch-slot permutation for an epoch — pure in (seed, epoch)."""
        return make_rng(self.seed, epoch).permutation(self.num_patches)

    def _load_pair(self, epoch, index):
        if self.kind == "synth":
            sharp = images.load_image(self.sharp_paths[index])
            rng = make_rng(self.seed, epoch, index)
            res = synthesize_pair(sharp, self.synth_cfg, rng)
            return res.blurry, res.sharp
        b_path, s_path = self.manifest.entries[index]
        return images.load_image(b_path), images.load_image(s_path)

    def _slot_patch(self, cache, epoch, slot):
        img_idx = int(np.searchsorted(self.cum_counts, slot, side="right") - 1)
        patch_idx = int(slot - self.cum_counts[img_idx])
        if img_idx not in cache:
            cache[img_idx] = self._load_pair(epoch, img_idx)
        blurry, sharp = cache[img_idx]
        offsets = patch_grid(sharp.shape[1], sharp.shape[2], self.spec)
        t, l = offsets[patch_idx]
        s = self.spec.size
        return blurry[:, t:t + s, l:l + s], sharp[:, t:t + s, l:l + s]

    def batches(self, start_step=0):
        """Yield (blurry, sharp) float32 tensor batches forever, starting
        at global batch index ``start_step``."""
        bpe = self.batches_per_epoch
        epoch, offset = divmod(start_step, bpe)
        while True:
            order = self.epoch_order(epoch)
            cache = {}
            for b in range(offset, bpe):
                slots = order[b * self.batch_size:(b + 1) * self.batch_size]
                pairs = [self._slot_patch(cache, epoch, int(s)) for s in slots]
                blurry = torch.stack([images.to_tensor(p[0]) for p in pairs])
                sharp = torch.stack([images.to_tensor(p[1]) for p in pairs])
                yield blurry, sharp
            offset = 0
            epoch += 1


def iterate_pairs(source):
    """Yield (name, blurry, sharp) full-image pairs from a pair source."""
    kind, payload = resolve_source(source)
    if kind != "pairs":
        raise ValueError(
            f"{source} is not a pair source (need a manifest or blur/+sharp/ trees)")
    if not payload.entries:
        raise EmptyDatasetError(f"no pairs found in {source}")
    for b_path, s_path in payload.entries:
        try:
            blurry = images.load_image(b_path)
            sharp = images.load_image(s_path)
        except Exception as exc:  # noqa: BLE001
            log.warning("skipping unreadable pair %s / %s: %s", b_path, s_path, exc)
            continue
        yield b_path.stem, blurry, sharp
