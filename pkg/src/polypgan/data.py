"""Dataset loading, preprocessing, paired augmentation, synthetic data.

Images are float32 (H, W, 3) arrays in [0, 1]; masks are float32
(H, W, 1) arrays with values in {0, 1}. Dataset directories follow the
layout <root>/images/*.{png,jpg,jpeg} and <root>/masks/*.png with
matching file stems.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

IMAGE_SIZE = 256
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


class DataError(Exception):
    """Raised for malformed dataset directories or undecodable files."""


@dataclass
class ImageSample:
    id: str
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    mask: np.ndarray  # (H, W, 1) float32 in {0, 1}


@dataclass
class AugmentConfig:
    p_flip_h: float = 0.5
    p_flip_v: float = 0.5
    rot_degrees: tuple[float, float] = (-10.0, 10.0)
    brightness_range: tuple[float, float] = (0.9, 1.1)
    contrast_range: tuple[float, float] = (0.9, 1.1)
    seed: int = 0

    def __post_init__(self):
        for name in ("p_flip_h", "p_flip_v"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class SyntheticSpec:
    n_samples: int = 16
    blobs_per_image: tuple[int, int] = (1, 3)
    blob_radius: tuple[float, float] = (14.0, 48.0)
    background_noise_sigma: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.blob_radius[0] < 2:
            raise ValueError("blob radius too small to guarantee foreground pixels")


def sample_rng(master_seed: int, *counters: int) -> np.random.Generator:
    """Independent per-sample stream; parallel order never changes draws."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, *counters]))


def scan_dataset(root: str | Path) -> list[tuple[Path, Path]]:
    """Sorted (image_path, mask_path) pairs under ``root``.

    Raises :class:`DataError` if the layout is missing, empty, or any image
    lacks a mask with the same stem.
    """
    root = Path(root)
    images_dir = root / "images"
    masks_dir = root / "masks"
    if not images_dir.is_dir() or not masks_dir.is_dir():
        raise DataError(f"{root} must contain images/ and masks/ subdirectories")
    images = sorted(
        (p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS),
        key=lambda p: p.stem,
    )
    if not images:
        raise DataError(f"no images found under {images_dir}")
    pairs = []
    missing = []
    for img in images:
        mask = masks_dir / f"{img.stem}.png"
        if not mask.exists():
            missing.append(img.name)
        else:
            pairs.append((img, mask))
    if missing:
        raise DataError(f"images with no matching mask: {', '.join(missing)}")
    return pairs


def load_and_preprocess(
    image_path: str | Path, mask_path: str | Path, size: int = IMAGE_SIZE
) -> ImageSample:
    """Decode, resize to ``size``, scale image to [0, 1], binarize mask.

    Images are resized bilinearly; masks with nearest-neighbor and then
    thresholded at >127 of 255.
    """
    try:
        with Image.open(image_path) as im:
            image = im.convert("RGB").resize((size, size), Image.BILINEAR)
            image = np.asarray(image, dtype=np.float32) / 255.0
        with Image.open(mask_path) as mm:
            mask = mm.convert("L").resize((size, size), Image.NEAREST)
            mask = (np.asarray(mask) > 127).astype(np.float32)[..., None]
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode {image_path} / {mask_path}: {exc}") from exc
    return ImageSample(id=Path(image_path).stem, image=image, mask=mask)


def load_dataset(root: str | Path, size: int = IMAGE_SIZE) -> list[ImageSample]:
    return [load_and_preprocess(img, mask, size) for img, mask in scan_dataset(root)]


def augment_sample(
    sample: ImageSample, cfg: AugmentConfig, rng: np.random.Generator
) -> ImageSample:
    """Randomly flip/rotate image+mask together, jitter image photometry.

    Exactly five draws are consumed from ``rng`` in fixed order: flip-h,
    flip-v, angle, brightness, contrast. Geometric ops hit image and mask
    identically (mask via nearest-neighbor with zero fill, image with
    reflect padding); brightness/contrast multiply only the image and clip
    to [0, 1]. Identity settings return a bit-identical copy.
    """
    u_h = rng.random()
    u_v = rng.random()
    angle = rng.uniform(cfg.rot_degrees[0], cfg.rot_degrees[1])
    brightness = rng.uniform(cfg.brightness_range[0], cfg.brightness_range[1])
    contrast = rng.uniform(cfg.contrast_range[0], cfg.contrast_range[1])

    image = sample.image.copy()
    mask = sample.mask.copy()
    if u_h < cfg.p_flip_h:
        image = image[:, ::-1, :].copy()
        mask = mask[:, ::-1, :].copy()
    if u_v < cfg.p_flip_v:
        image = image[::-1, :, :].copy()
        mask = mask[::-1, :, :].copy()
    if angle != 0.0:
        image = ndimage.rotate(
            image, angle, axes=(1, 0), reshape=False, order=1, mode="reflect"
        )
        mask = ndimage.rotate(
            mask, angle, axes=(1, 0), reshape=False, order=0, mode="constant", cval=0.0
        )
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
        mask = (mask > 0.5).astype(np.float32)
    if brightness != 1.0:
        image = np.clip(image * brightness, 0.0, 1.0).astype(np.float32)
    if contrast != 1.0:
        mean = image.mean()
        image = np.clip((image - mean) * contrast + mean, 0.0, 1.0).astype(np.float32)
    return ImageSample(id=sample.id, image=image, mask=mask)


def _ellipse_support(size: int, cx, cy, rx, ry, theta) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx = xx - cx
    dy = yy - cy
    ct, st = np.cos(theta), np.sin(theta)
    u = (dx * ct + dy * st) / rx
    v = (-dx * st + dy * ct) / ry
    return u * u + v * v  # <= 1 inside the ellipse


def generate_synthetic(spec: SyntheticSpec, size: int = IMAGE_SIZE) -> list[ImageSample]:
    """Textured backgrounds with 1-3 soft elliptical blobs; masks are the
    exact blob supports. Deterministic for a given seed.

    ``spec.blob_radius`` is interpreted at the default resolution and
    scaled proportionally for other sizes so blobs always fit.
    """
    r_lo = max(2.0, spec.blob_radius[0] * size / IMAGE_SIZE)
    r_hi = max(r_lo, spec.blob_radius[1] * size / IMAGE_SIZE)
    samples = []
    for i in range(spec.n_samples):
        rng = sample_rng(spec.seed, i)
        base = rng.uniform(0.3, 0.55, size=3)
        texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=12.0)
        texture = texture / (np.abs(texture).max() + 1e-9) * 0.08
        image = np.clip(base[None, None, :] + texture[:, :, None], 0.0, 1.0)

        mask = np.zeros((size, size), dtype=bool)
        n_blobs = int(rng.integers(spec.blobs_per_image[0], spec.blobs_per_image[1] + 1))
        for _ in range(n_blobs):
            rx = rng.uniform(r_lo, r_hi)
            ry = rng.uniform(r_lo, r_hi)
            margin = max(rx, ry) + 2
            cx = rng.uniform(margin, size - margin)
            cy = rng.uniform(margin, size - margin)
            theta = rng.uniform(0, np.pi)
            d2 = _ellipse_support(size, cx, cy, rx, ry, theta)
            support = d2 <= 1.0
            mask |= support
            # Soft-edged blob with a distinct warm tint.
            alpha = np.clip(1.0 - d2, 0.0, 1.0) ** 0.5
            tint = np.array(
                [rng.uniform(0.65, 0.9), rng.uniform(0.35, 0.55), rng.uniform(0.3, 0.5)]
            )
            image = image * (1.0 - alpha[:, :, None]) + tint[None, None, :] * alpha[:, :, None]
        noise = rng.normal(0.0, spec.background_noise_sigma, size=(size, size, 3))
        image = np.clip(image + noise, 0.0, 1.0).astype(np.float32)
        samples.append(
            ImageSample(
                id=f"synthetic_{i:04d}",
                image=image,
                mask=mask.astype(np.float32)[..., None],
            )
        )
    return samples


def write_dataset(samples: list[ImageSample], root: str | Path) -> None:
    """Write samples to the standard images/ + masks/ PNG layout."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        img = Image.fromarray(np.rint(s.image * 255.0).astype(np.uint8))
        img.save(root / "images" / f"{s.id}.png")
        mask = Image.fromarray((s.mask[:, :, 0] * 255.0).astype(np.uint8), mode="L")
        mask.save(root / "masks" / f"{s.id}.png")
