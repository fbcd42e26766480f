"""Synthetic multi-expert brain-mask datasets.

Each case has a smooth "brain" region rendered into a noisy image. Every
expert annotates the same region in their own style: a systematic offset of
the contour (dilation for a positive ``bias_radius``, erosion for a negative
one) plus a smooth, low-harmonic radial wobble that changes from case to case.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data import AnnotatedCase, MultiExpertDataset, quantize_image
from .errors import ConfigError, DataError

MAX_RETRIES = 10


@dataclass(frozen=True)
class ExpertStyle:
    expert_id: int
    bias_radius: int = 0
    wobble_amplitude: float = 0.0
    wobble_frequency: int = 2
    style_seed: int = 0

    def check(self, height: int, width: int) -> None:
        limit = min(height, width) / 8
        if self.expert_id < 1:
            raise ConfigError(f"expert_id must be >= 1, got {self.expert_id}")
        if abs(self.bias_radius) > limit:
            raise ConfigError(f"expert {self.expert_id}: |bias_radius| must be <= {limit:g}")
        if not 0 <= self.wobble_amplitude <= limit:
            raise ConfigError(f"expert {self.expert_id}: wobble_amplitude must be in [0, {limit:g}]")
        if self.wobble_frequency < 1:
            raise ConfigError(f"expert {self.expert_id}: wobble_frequency must be >= 1")


@dataclass(frozen=True)
class SynthConfig:
    n_cases: int = 39
    height: int = 64
    width: int = 64
    styles: tuple[ExpertStyle, ...] = field(default_factory=lambda: tuple(default_reference_styles()))
    base_seed: int = 0
    kind: str = "blob"
    n_test: int = 5

    def __post_init__(self):
        object.__setattr__(self, "styles", tuple(
            s if isinstance(s, ExpertStyle) else ExpertStyle(**s) for s in self.styles))
        if self.n_cases < 1:
            raise ConfigError("n_cases must be >= 1")
        if min(self.height, self.width) < 16:
            raise ConfigError("synthetic images must be at least 16x16")
        if self.kind not in ("ellipse", "blob"):
            raise ConfigError(f"unknown foreground kind {self.kind!r}")
        if self.n_test < 0 or (self.n_test and self.n_test >= self.n_cases):
            raise ConfigError(f"n_test={self.n_test} must be smaller than n_cases={self.n_cases}")
        ids = [s.expert_id for s in self.styles]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate expert ids in styles: {ids}")
        for s in self.styles:
            s.check(self.height, self.width)

    def to_dict(self) -> dict:
        return asdict(self)


def default_reference_styles() -> list[ExpertStyle]:
    """Seven rater styles mimicking a 5 + 2 annotation/new-expert split.

    Experts 1-5 carry small, mutually distinct contour biases. Expert 6 sits
    inside their envelope without coinciding with any of them; expert 7 draws
    far larger, wobblier contours than everybody else.
    """
    return [
        ExpertStyle(1, -3, 0.5, 2, 101),
        ExpertStyle(2, -2, 0.5, 3, 102),
        ExpertStyle(3, 1, 0.5, 2, 103),
        ExpertStyle(4, 3, 0.5, 3, 104),
        ExpertStyle(5, 2, 0.6, 4, 105),
        ExpertStyle(6, 0, 0.6, 3, 106),
        ExpertStyle(7, 6, 1.5, 2, 107),
    ]


def load_styles(path) -> list[ExpertStyle]:
    """Read a JSON list of style objects (keys as in :class:`ExpertStyle`)."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read styles file {path}: {exc}") from None
    try:
        return [ExpertStyle(**entry) for entry in raw]
    except TypeError as exc:
        raise ConfigError(f"bad style entry in {path}: {exc}") from None


# ------------------------------------------------------------------ shapes


def _polar(height, width, center):
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    dy, dx = rows - center[0], cols - center[1]
    return np.hypot(dy, dx), np.arctan2(dy, dx)


def _harmonic_field(theta, rng, n_harmonics, amplitude, first=1):
    """Smooth periodic function of angle scaled so that max |f| == amplitude."""
    if amplitude == 0:
        return np.zeros_like(theta)
    ks = np.arange(first, first + n_harmonics)
    coef_c = rng.normal(size=n_harmonics) / ks
    coef_s = rng.normal(size=n_harmonics) / ks
    grid = np.linspace(-np.pi, np.pi, 720, endpoint=False)

    def evaluate(t):
        t = np.asarray(t)[..., None]
        return np.sum(coef_c * np.cos(ks * t) + coef_s * np.sin(ks * t), axis=-1)

    peak = np.max(np.abs(evaluate(grid)))
    if peak == 0:
        return np.zeros_like(theta)
    return evaluate(theta) * (amplitude / peak)


def _base_shape(config: SynthConfig, rng, shrink: float):
    h, w = config.height, config.width
    size = min(h, w)
    center = (h / 2 + rng.uniform(-0.06, 0.06) * h, w / 2 + rng.uniform(-0.06, 0.06) * w)
    radius = size * rng.uniform(0.22, 0.30) * shrink
    rho, theta = _polar(h, w, center)
    if config.kind == "ellipse":
        aspect = rng.uniform(0.75, 1.0)
        angle = rng.uniform(0, np.pi)
        dy, dx = rho * np.sin(theta - angle), rho * np.cos(theta - angle)
        inside = (dx / radius) ** 2 + (dy / (radius * aspect)) ** 2 <= 1.0
    else:
        boundary = radius * (1.0 + _harmonic_field(theta, rng, 4, 0.18, first=2))
        inside = rho <= boundary
    return inside, center


def _offset_mask(base, center, style: ExpertStyle, rng) -> np.ndarray:
    """Offset ``base`` by the style's bias plus a smooth angular wobble."""
    if style.bias_radius == 0 and style.wobble_amplitude == 0:
        return base.astype(np.uint8)
    h, w = base.shape
    _, theta = _polar(h, w, center)
    offset = style.bias_radius + _harmonic_field(theta, rng, style.wobble_frequency, style.wobble_amplitude)
    dist_out = ndimage.distance_transform_edt(~base)
    dist_in = ndimage.distance_transform_edt(base)
    # dilation by t keeps outside pixels within t; erosion by |t| drops inside pixels within |t|
    keep = np.where(base, dist_in > -offset, dist_out <= offset)
    return keep.astype(np.uint8)


def _touches_border(mask) -> bool:
    return bool(mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any())


def _render_image(base, rng) -> np.ndarray:
    """Brain-like rendering: textured interior, bright rim, bias field, noise.

    Cases come in two contrast types (foreground brighter than the
    surrounding tissue, or darker, in about 40% of cases) and may contain up
    to three unannotated structures outside the rim that are as bright as the
    foreground, so a handful of cases does not show the full variation.
    """
    h, w = base.shape
    dist_out = ndimage.distance_transform_edt(~base)

    def texture(sigma):
        t = ndimage.gaussian_filter(rng.normal(size=(h, w)), sigma)
        return t / (np.abs(t).max() + 1e-12)

    fg, bg = rng.uniform(0.3, 0.55), rng.uniform(0.05, 0.2)
    if rng.random() < 0.4:
        fg, bg = rng.uniform(0.08, 0.2), rng.uniform(0.4, 0.6)
    image = bg + 0.08 * texture(3.0)
    image[base] = fg + 0.15 * texture(2.0)[base]
    rim_in, rim_width = rng.uniform(2.0, 4.0), rng.uniform(2.0, 3.5)
    rim = (dist_out > rim_in) & (dist_out <= rim_in + rim_width)
    image[rim] = rng.uniform(0.5, 0.75)
    free = dist_out > rim_in + rim_width + 2
    rows, cols = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(0, 4)):
        cy, cx, r = rng.uniform(0, h), rng.uniform(0, w), rng.uniform(2, 6)
        blob = ((rows - cy) ** 2 + (cols - cx) ** 2 < r * r) & free
        image[blob] = fg + rng.uniform(-0.05, 0.1)
    gy, gx = rng.uniform(-0.25, 0.25, size=2)
    image *= 1.0 + gy * (rows / max(h, w) - 0.5) + gx * (cols / max(h, w) - 0.5)
    image = ndimage.gaussian_filter(image, rng.uniform(0.6, 1.5))
    image += rng.normal(scale=rng.uniform(0.03, 0.08), size=(h, w))
    return quantize_image(np.clip(image, 0.0, 1.0))


def generate_case(config: SynthConfig, case_index: int) -> AnnotatedCase:
    """Deterministically generate case ``case_index`` (1-based) of ``config``."""
    if not 1 <= case_index <= config.n_cases:
        raise DataError(f"case_index {case_index} outside 1..{config.n_cases}")
    for attempt in range(MAX_RETRIES):
        rng = np.random.default_rng([config.base_seed, case_index, attempt])
        base, center = _base_shape(config, rng, shrink=1.0 - 0.05 * attempt)
        masks = {}
        for style in config.styles:
            style_rng = np.random.default_rng([style.style_seed, case_index, attempt])
            mask = _offset_mask(base, center, style, style_rng)
            if not mask.any() or _touches_border(mask):
                break
            masks[style.expert_id] = mask
        else:
            if base.any() and not _touches_border(base):
                image = _render_image(base, rng)
                return AnnotatedCase(case_index, image, masks)
    raise DataError(f"could not generate a valid case {case_index} after {MAX_RETRIES} attempts")


def generate_dataset(config: SynthConfig) -> MultiExpertDataset:
    """All ``n_cases`` cases; the last ``n_test`` form the ``test`` split."""
    cases = tuple(generate_case(config, k) for k in range(1, config.n_cases + 1))
    n_train = config.n_cases - config.n_test
    splits = {}
    if config.n_test:
        splits = {"train": tuple(range(1, n_train + 1)), "test": tuple(range(n_train + 1, config.n_cases + 1))}
    roster = frozenset(s.expert_id for s in config.styles)
    return MultiExpertDataset(cases, roster, (1.0, 1.0), splits)
