"""Joint image/mask augmentation for training.

One geometric transform (translation, zoom, rotation) is drawn per call and
applied to the image with bilinear interpolation and to every mask with
nearest-neighbour interpolation. Gaussian noise, Gaussian blur and brightness
jitter touch the image only.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .data import AnnotatedCase
from .errors import ConfigError


@dataclass(frozen=True)
class AugmentConfig:
    translation: float = 0.10  # fraction of image size, symmetric
    zoom: tuple[float, float] = (0.9, 1.1)
    rotation: float = 15.0  # degrees, symmetric
    noise_sigma: tuple[float, float] = (0.0, 0.05)
    blur_sigma: tuple[float, float] = (0.5, 1.0)
    brightness: float = 0.1  # multiplicative factor drawn from 1 +- brightness
    probability: float = 0.5
    crop_size: tuple[int, int] = (192, 192)

    def __post_init__(self):
        object.__setattr__(self, "zoom", tuple(float(z) for z in self.zoom))
        object.__setattr__(self, "noise_sigma", tuple(float(s) for s in self.noise_sigma))
        object.__setattr__(self, "blur_sigma", tuple(float(s) for s in self.blur_sigma))
        object.__setattr__(self, "crop_size", tuple(int(s) for s in self.crop_size))
        if min(self.translation, self.rotation, self.brightness) < 0:
            raise ConfigError("augmentation ranges must be non-negative")
        for name in ("zoom", "noise_sigma", "blur_sigma"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigError(f"{name} must be a non-negative (low, high) range")
        if self.zoom[0] == 0:
            raise ConfigError("zoom range must be positive")
        if not 0 <= self.probability <= 1:
            raise ConfigError("probability must be in [0, 1]")
        if len(self.crop_size) != 2 or min(self.crop_size) < 1:
            raise ConfigError("crop_size must be two positive integers")

    @classmethod
    def identity(cls, crop_size=(192, 192)) -> "AugmentConfig":
        return cls(0.0, (1.0, 1.0), 0.0, (0.0, 0.0), (0.0, 0.0), 0.0, 0.0, crop_size)

    def to_dict(self) -> dict:
        return asdict(self)


def center_crop(array: np.ndarray, size) -> np.ndarray:
    """Centre-crop a 2-D array to ``size``, zero-padding where it is smaller."""
    array = np.asarray(array)
    out_h, out_w = size
    h, w = array.shape
    result = np.zeros((out_h, out_w), dtype=array.dtype)
    # source window and destination window for each axis
    def window(n, m):
        if n >= m:
            start = (n - m) // 2
            return slice(start, start + m), slice(0, m)
        start = (m - n) // 2
        return slice(0, n), slice(start, start + n)

    src_r, dst_r = window(h, out_h)
    src_c, dst_c = window(w, out_w)
    result[dst_r, dst_c] = array[src_r, src_c]
    return result


def _affine(shape, shift, scale, angle_deg):
    """Matrix/offset mapping output coordinates to input coordinates."""
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    matrix = rot / scale
    center = (np.asarray(shape, dtype=np.float64) - 1) / 2
    offset = center - matrix @ (center + np.asarray(shift))
    return matrix, offset


def augment_sample(case: AnnotatedCase, cfg: AugmentConfig, rng_key) -> AnnotatedCase:
    """Augment one case; deterministic given ``rng_key`` (int or int sequence)."""
    h, w = case.shape
    if cfg.crop_size[0] > h or cfg.crop_size[1] > w:
        raise ValueError(f"crop {cfg.crop_size} larger than image {case.shape}")
    rng = np.random.default_rng(rng_key)
    # fixed draw order so each decision is keyed the same way across configs
    apply = rng.random(6) < cfg.probability
    u = rng.random(9)
    shift = (
        (2 * u[0] - 1) * cfg.translation * h if apply[0] else 0.0,
        (2 * u[1] - 1) * cfg.translation * w if apply[0] else 0.0,
    )
    scale = cfg.zoom[0] + u[2] * (cfg.zoom[1] - cfg.zoom[0]) if apply[1] else 1.0
    angle = (2 * u[3] - 1) * cfg.rotation if apply[2] else 0.0
    noise_sigma = cfg.noise_sigma[0] + u[4] * (cfg.noise_sigma[1] - cfg.noise_sigma[0]) if apply[3] else 0.0
    blur_sigma = cfg.blur_sigma[0] + u[5] * (cfg.blur_sigma[1] - cfg.blur_sigma[0]) if apply[4] else 0.0
    gain = 1.0 + (2 * u[6] - 1) * cfg.brightness if apply[5] else 1.0

    image = case.image.astype(np.float64)
    masks = dict(case.masks)
    if shift != (0.0, 0.0) or scale != 1.0 or angle != 0.0:
        matrix, offset = _affine((h, w), shift, scale, angle)
        image = ndimage.affine_transform(image, matrix, offset, order=1, mode="constant", cval=0.0)
        masks = {
            r: ndimage.affine_transform(m, matrix, offset, order=0, mode="constant", cval=0)
            for r, m in masks.items()
        }
    if blur_sigma > 0:
        image = ndimage.gaussian_filter(image, blur_sigma)
    if noise_sigma > 0:
        image = image + rng.normal(scale=noise_sigma, size=image.shape)
    if gain != 1.0:
        image = image * gain
    image = np.clip(image, 0.0, 1.0)
    if (h, w) != cfg.crop_size:
        image = center_crop(image, cfg.crop_size)
        masks = {r: center_crop(m, cfg.crop_size) for r, m in masks.items()}
    masks = {r: (m > 0).astype(np.uint8) for r, m in masks.items()}
    return AnnotatedCase(case.case_index, image.astype(np.float32), masks)


def prepare_eval(case: AnnotatedCase, crop_size) -> AnnotatedCase:
    """Test-time pipeline: centre crop only."""
    if case.shape == tuple(crop_size):
        return case
    return AnnotatedCase(
        case.case_index,
        center_crop(case.image, crop_size),
        {r: center_crop(m, crop_size) for r, m in case.masks.items()},
    )
