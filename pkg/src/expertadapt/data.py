"""Multi-expert datasets: in-memory model, directory I/O and subsampling.

Case indices are 1-based everywhere in this module so that sampling plans read
the same way they are usually written down ("samples 1-10", "28-34 and 1-3").

On disk a dataset is a directory::

    <root>/manifest.json
    <root>/case_<k>/image.png       8- or 16-bit grayscale
    <root>/case_<k>/expert_<r>.png  8-bit, 0 = background, 255 = foreground
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import DataError, UnknownExpertError, ValidationError

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "expertadapt-dataset"
MANIFEST_VERSION = 1
MIN_SIZE = 8

_U16 = np.float32(65535.0)
_U8 = np.float32(255.0)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def validate_image(image) -> np.ndarray:
    """Return ``image`` as a read-only float32 array after checking it."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValidationError(f"image must be 2-D, got shape {image.shape}")
    if image.shape[0] < MIN_SIZE or image.shape[1] < MIN_SIZE:
        raise ValidationError(f"image must be at least {MIN_SIZE}x{MIN_SIZE}, got {image.shape}")
    image = image.astype(np.float32, copy=False)
    if not np.all(np.isfinite(image)):
        raise ValidationError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValidationError("image values must lie in [0, 1]")
    return _frozen(image)


def validate_mask(mask, shape=None) -> np.ndarray:
    """Return ``mask`` as a read-only uint8 {0, 1} array after checking it."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {mask.shape}")
    if shape is not None and mask.shape != tuple(shape):
        raise ValidationError(f"mask shape {mask.shape} does not match image shape {tuple(shape)}")
    if mask.dtype == bool:
        mask = mask.astype(np.uint8)
    values = np.unique(mask)
    if not np.all(np.isin(values, (0, 1))):
        raise ValidationError(f"mask is not binary (values {values[:5].tolist()}...)")
    return _frozen(mask.astype(np.uint8))


@dataclass(frozen=True)
class AnnotatedCase:
    """One image and the masks drawn on it by each expert."""

    case_index: int
    image: np.ndarray
    masks: Mapping[int, np.ndarray]

    def __post_init__(self):
        if int(self.case_index) < 1:
            raise ValidationError(f"case_index must be >= 1, got {self.case_index}")
        image = validate_image(self.image)
        masks = {}
        for expert, mask in self.masks.items():
            expert = int(expert)
            if expert < 1:
                raise ValidationError(f"expert ids must be >= 1, got {expert}")
            try:
                masks[expert] = validate_mask(mask, image.shape)
            except ValidationError as exc:
                raise ValidationError(f"case {self.case_index}, expert {expert}: {exc}") from None
        object.__setattr__(self, "case_index", int(self.case_index))
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "masks", MappingProxyType(dict(sorted(masks.items()))))

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape

    @property
    def experts(self) -> tuple[int, ...]:
        return tuple(self.masks)

    def mask(self, expert: int) -> np.ndarray:
        try:
            return self.masks[int(expert)]
        except KeyError:
            raise UnknownExpertError(f"case {self.case_index} has no mask for expert {expert}") from None


@dataclass(frozen=True)
class MultiExpertDataset:
    """An ordered, immutable collection of cases annotated by a common roster.

    ``splits`` optionally names subsets of case indices (``train``/``test``).
    """

    cases: tuple[AnnotatedCase, ...]
    roster: frozenset[int] = None
    spacing: tuple[float, float] = (1.0, 1.0)
    splits: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        cases = tuple(sorted(self.cases, key=lambda c: c.case_index))
        indices = [c.case_index for c in cases]
        if len(set(indices)) != len(indices):
            raise ValidationError("case indices must be unique")
        roster = self.roster
        if roster is None:
            roster = frozenset(cases[0].experts) if cases else frozenset()
        roster = frozenset(int(r) for r in roster)
        for case in cases:
            missing = roster - set(case.experts)
            if missing:
                raise ValidationError(f"case {case.case_index} lacks masks for experts {sorted(missing)}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 2 or min(spacing) <= 0:
            raise ValidationError(f"spacing must be two positive numbers, got {self.spacing}")
        splits = {}
        known = set(indices)
        for name, members in dict(self.splits).items():
            members = tuple(int(i) for i in members)
            unknown = set(members) - known
            if unknown:
                raise ValidationError(f"split {name!r} names unknown cases {sorted(unknown)}")
            splits[name] = members
        object.__setattr__(self, "cases", cases)
        object.__setattr__(self, "roster", roster)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "splits", MappingProxyType(splits))
        object.__setattr__(self, "_by_index", {c.case_index: c for c in cases})

    def __len__(self) -> int:
        return len(self.cases)

    def __iter__(self) -> Iterator[AnnotatedCase]:
        return iter(self.cases)

    @property
    def n_cases(self) -> int:
        return len(self.cases)

    @property
    def case_indices(self) -> tuple[int, ...]:
        return tuple(c.case_index for c in self.cases)

    def case(self, index: int) -> AnnotatedCase:
        try:
            return self._by_index[int(index)]
        except KeyError:
            raise DataError(f"no case with index {index}") from None

    def split(self, name: str) -> "MultiExpertDataset":
        """Return the named split as its own dataset (no splits attached)."""
        if name not in self.splits:
            raise DataError(f"dataset has no split named {name!r}")
        return restrict(self, sorted(self.roster), self.splits[name])

    def at_positions(self, positions: Iterable[int]) -> "MultiExpertDataset":
        """Select cases by 1-based position in case order, keeping that order."""
        positions = list(positions)
        n = len(self.cases)
        bad = [p for p in positions if not 1 <= p <= n]
        if bad:
            raise DataError(f"positions {bad} outside 1..{n}")
        return restrict(self, sorted(self.roster), [self.cases[p - 1].case_index for p in positions])


@dataclass(frozen=True)
class SamplingPlan:
    start_index: int
    count: int
    cardinality: int

    def indices(self) -> list[int]:
        return sample_indices(self.start_index, self.count, self.cardinality)


def sample_indices(start: int, count: int, cardinality: int) -> list[int]:
    """Consecutive 1-based indices from ``start``, wrapping past ``cardinality``.

    >>> sample_indices(28, 10, 34)
    [28, 29, 30, 31, 32, 33, 34, 1, 2, 3]
    """
    if cardinality < 1:
        raise ValueError(f"cardinality must be >= 1, got {cardinality}")
    if not 1 <= start <= cardinality:
        raise ValueError(f"start index {start} outside 1..{cardinality}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if count > cardinality:
        raise ValueError(f"cannot sample {count} distinct cases from {cardinality}")
    return [(start - 1 + k) % cardinality + 1 for k in range(count)]


def starting_indices(cardinality: int, n_ways: int) -> list[int]:
    """Evenly spaced 1-based starting indices, stride ``cardinality // n_ways``."""
    if n_ways < 1:
        raise ValueError(f"n_ways must be >= 1, got {n_ways}")
    if cardinality < n_ways:
        raise ValueError(f"cardinality {cardinality} smaller than number of ways {n_ways}")
    stride = cardinality // n_ways
    return [1 + k * stride for k in range(n_ways)]


def expert_combinations(roster: Iterable[int], k: int) -> list[tuple[int, ...]]:
    """All size-``k`` subsets of ``roster`` in lexicographic order."""
    members = sorted({int(r) for r in roster})
    if not 1 <= k <= len(members):
        raise ValueError(f"k={k} outside 1..{len(members)}")
    return list(itertools.combinations(members, k))


def restrict(dataset: MultiExpertDataset, combo: Sequence[int], indices: Iterable[int]) -> MultiExpertDataset:
    """Sub-dataset with only the listed cases and only the masks of ``combo``.

    Cases keep the order given by ``indices`` (they are re-sorted by case index
    in the result, which is the dataset's canonical order).
    """
    combo = [int(r) for r in combo]
    if not combo:
        raise ValueError("expert combination must not be empty")
    if len(set(combo)) != len(combo):
        raise ValueError(f"duplicate experts in combination {combo}")
    unknown = set(combo) - dataset.roster
    if unknown:
        raise UnknownExpertError(f"unknown experts {sorted(unknown)}; roster is {sorted(dataset.roster)}")
    cases = []
    for idx in indices:
        case = dataset.case(idx)
        cases.append(AnnotatedCase(case.case_index, case.image, {r: case.masks[r] for r in combo}))
    return MultiExpertDataset(tuple(cases), frozenset(combo), dataset.spacing)


# ---------------------------------------------------------------- disk I/O


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            mode = im.mode
            array = np.array(im)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return mode, array


def _load_image(path: Path) -> np.ndarray:
    mode, array = _read_png(path)
    if mode == "L":
        return array.astype(np.float32) / _U8
    if mode in ("I;16", "I;16B", "I"):
        return array.astype(np.float32) / _U16
    raise DataError(f"{path}: unsupported image mode {mode!r}")


def _load_mask(path: Path) -> np.ndarray:
    mode, array = _read_png(path)
    if array.ndim != 2:
        raise DataError(f"{path}: mask must be single channel")
    values = np.unique(array)
    if not np.all(np.isin(values, (0, 255))):
        raise ValidationError(f"{path}: mask values must be 0 or 255")
    return (array == 255).astype(np.uint8)


def load_manifest(root) -> MultiExpertDataset:
    """Read a dataset directory written by :func:`save_dataset`."""
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        if root.is_dir() and not any(root.glob("case_*")):
            raise DataError(f"no cases found in {root}")
        raise DataError(f"missing {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {manifest_path}: {exc}") from None
    if manifest.get("format", MANIFEST_FORMAT) != MANIFEST_FORMAT:
        raise DataError(f"{manifest_path} is not a dataset manifest")
    indices = [int(i) for i in manifest.get("cases", [])]
    experts = [int(r) for r in manifest.get("experts", [])]
    if not indices:
        raise DataError(f"no cases found in {root}")
    cases = []
    for k in indices:
        case_dir = root / f"case_{k}"
        try:
            image = _load_image(case_dir / "image.png")
        except FileNotFoundError:
            raise DataError(f"missing image for case {k} ({case_dir / 'image.png'})") from None
        masks = {}
        for r in experts:
            try:
                masks[r] = _load_mask(case_dir / f"expert_{r}.png")
            except FileNotFoundError:
                raise DataError(f"missing mask for case {k}, expert {r}") from None
        cases.append(AnnotatedCase(k, image, masks))
    return MultiExpertDataset(
        tuple(cases),
        frozenset(experts),
        tuple(manifest.get("spacing", (1.0, 1.0))),
        manifest.get("splits", {}),
    )


def save_dataset(dataset: MultiExpertDataset, root) -> Path:
    """Write ``dataset`` in the directory layout read by :func:`load_manifest`.

    Images are stored as 16-bit PNG; values that are multiples of 1/65535
    round-trip exactly.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for case in dataset:
        case_dir = root / f"case_{case.case_index}"
        case_dir.mkdir(exist_ok=True)
        pixels = np.round(case.image.astype(np.float64) * 65535.0).astype(np.uint16)
        Image.fromarray(pixels).save(case_dir / "image.png")
        for r, mask in case.masks.items():
            Image.fromarray((mask * 255).astype(np.uint8)).save(case_dir / f"expert_{r}.png")
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "cases": list(dataset.case_indices),
        "experts": sorted(dataset.roster),
        "spacing": list(dataset.spacing),
        "splits": {name: list(members) for name, members in dataset.splits.items()},
    }
    tmp = root / (MANIFEST_NAME + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2) + "\n")
    os.replace(tmp, root / MANIFEST_NAME)
    return root


def quantize_image(image: np.ndarray) -> np.ndarray:
    """Snap intensities to the 16-bit grid used on disk."""
    return (np.round(np.clip(image, 0.0, 1.0) * 65535.0).astype(np.uint16).astype(np.float32) / _U16)
