"""Overlap and surface-distance metrics for binary 2-D masks.

Surfaces use 4-connectivity: a foreground pixel is on the surface when at
least one of its four neighbours is background, pixels outside the grid
counting as background. Distances are Euclidean in physical units given by
the pixel ``spacing`` (row, column).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import MetricUndefinedError

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class SurfaceSet:
    coords: np.ndarray  # (n, 2) integer (row, col)
    spacing: tuple[float, float]
    shape: tuple[int, int]

    def __len__(self):
        return len(self.coords)

    def physical(self) -> np.ndarray:
        return self.coords * np.asarray(self.spacing, dtype=np.float64)


@dataclass(frozen=True)
class MetricTriple:
    """Dice, ASSD and 95HD for one prediction/reference pair.

    Distances are ``None`` when undefined (one of the masks is empty).
    """

    dice: float
    assd: Optional[float]
    hd95: Optional[float]

    @property
    def defined(self) -> bool:
        return self.assd is not None and self.hd95 is not None

    def as_dict(self) -> dict:
        return {"dice": self.dice, "assd": self.assd, "hd95": self.hd95}


def _as_bool(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {mask.shape}")
    return mask.astype(bool)


def _pair(a, b):
    a, b = _as_bool(a), _as_bool(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def dice_score(a, b) -> float:
    """2|A∩B| / (|A|+|B|); two empty masks agree perfectly (1.0)."""
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def surface_mask(mask) -> np.ndarray:
    mask = _as_bool(mask)
    interior = ndimage.binary_erosion(mask, structure=_FOUR_CONNECTED, border_value=0)
    return mask & ~interior


def extract_surface(mask, spacing=(1.0, 1.0)) -> SurfaceSet:
    mask = _as_bool(mask)
    if not mask.any():
        raise MetricUndefinedError("undefined surface: mask is empty")
    coords = np.argwhere(surface_mask(mask))
    return SurfaceSet(coords, tuple(float(s) for s in spacing), mask.shape)


def directed_surface_distances(a, b, spacing=(1.0, 1.0)) -> np.ndarray:
    """Distance from every surface pixel of ``a`` to the nearest surface pixel of ``b``."""
    a, b = _pair(a, b)
    if not a.any() or not b.any():
        raise MetricUndefinedError("surface distance undefined for an empty mask")
    surf_a, surf_b = surface_mask(a), surface_mask(b)
    # exact Euclidean transform: distance of each pixel to the nearest surface pixel of b
    to_b = ndimage.distance_transform_edt(~surf_b, sampling=spacing)
    return to_b[surf_a]


def assd(a, b, spacing=(1.0, 1.0)) -> float:
    d_ab = directed_surface_distances(a, b, spacing)
    d_ba = directed_surface_distances(b, a, spacing)
    return float((d_ab.sum() + d_ba.sum()) / (d_ab.size + d_ba.size))


def hd95(a, b, spacing=(1.0, 1.0)) -> float:
    d_ab = directed_surface_distances(a, b, spacing)
    d_ba = directed_surface_distances(b, a, spacing)
    return float(max(np.percentile(d_ab, 95), np.percentile(d_ba, 95)))


def evaluate_case(pred, ref, spacing=(1.0, 1.0)) -> MetricTriple:
    pred, ref = _pair(pred, ref)
    dice = dice_score(pred, ref)
    if not pred.any() or not ref.any():
        return MetricTriple(dice, None, None)
    return MetricTriple(dice, assd(pred, ref, spacing), hd95(pred, ref, spacing))


def mean_metrics(triples) -> tuple[MetricTriple, int]:
    """Average a collection of triples.

    Dice is averaged over every case; undefined distance cells are left out of
    the distance means. Returns the mean triple and the number of undefined
    cells.
    """
    triples = list(triples)
    if not triples:
        raise ValueError("no metric triples to average")
    defined = [t for t in triples if t.defined]
    n_undefined = len(triples) - len(defined)
    if not defined:
        raise MetricUndefinedError("every case has undefined surface distances")
    return (
        MetricTriple(
            float(np.mean([t.dice for t in triples])),
            float(np.mean([t.assd for t in defined])),
            float(np.mean([t.hd95 for t in defined])),
        ),
        n_undefined,
    )
