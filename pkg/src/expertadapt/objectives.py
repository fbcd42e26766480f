"""Soft Dice loss and the multi-expert / fine-tuning objectives.

Both composite objectives are plain sums of per-sample Dice losses, as
written; the training loop divides by (batch size x number of experts)
before stepping so the learning rate means the same thing for any combo size.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np
import torch

from .data import AnnotatedCase
from .errors import UnknownExpertError

DEFAULT_SMOOTH = 1.0


def dice_loss(logits: torch.Tensor, target: torch.Tensor, smooth: float = DEFAULT_SMOOTH) -> torch.Tensor:
    """``1 - (2 sum(p y) + s) / (sum p + sum y + s)`` with ``p = sigmoid(logits)``.

    All elements of the inputs form one sample.
    """
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)} vs target {tuple(target.shape)}")
    if smooth <= 0:
        raise ValueError("smooth must be positive")
    p = torch.sigmoid(logits)
    y = target.to(p.dtype)
    return 1.0 - (2.0 * (p * y).sum() + smooth) / (p.sum() + y.sum() + smooth)


def dice_loss_per_sample(logits: torch.Tensor, target: torch.Tensor, smooth: float = DEFAULT_SMOOTH) -> torch.Tensor:
    """Dice loss of every sample in a ``(B, ...)`` batch, shape ``(B,)``."""
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)} vs target {tuple(target.shape)}")
    if smooth <= 0:
        raise ValueError("smooth must be positive")
    p = torch.sigmoid(logits).flatten(1)
    y = target.to(p.dtype).flatten(1)
    return 1.0 - (2.0 * (p * y).sum(1) + smooth) / (p.sum(1) + y.sum(1) + smooth)


def _model_dtype(model) -> torch.dtype:
    return next(model.parameters()).dtype


def images_to_tensor(images: Iterable[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.stack([np.asarray(x, dtype=np.float32) for x in images])[:, None]).to(dtype)


def masks_to_tensor(masks: Iterable[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.stack([np.asarray(m, dtype=np.float32) for m in masks])[:, None]).to(dtype)


def expert_term(model, images: torch.Tensor, targets: torch.Tensor, expert: int,
                smooth: float = DEFAULT_SMOOTH) -> torch.Tensor:
    """Sum over the batch of Dice losses of ``expert``'s branch."""
    return dice_loss_per_sample(model(images, expert), targets, smooth).sum()


def multi_task_loss(model, batch: Sequence[AnnotatedCase], combo: Sequence[int],
                    smooth: float = DEFAULT_SMOOTH) -> torch.Tensor:
    """Sum over cases and combo experts of the Dice loss of that expert's branch."""
    batch = list(batch)
    combo = [int(r) for r in combo]
    if not batch:
        return torch.zeros((), dtype=_model_dtype(model))
    for case in batch:
        missing = [r for r in combo if r not in case.masks]
        if missing:
            raise UnknownExpertError(f"case {case.case_index} has no annotation from experts {missing}")
    dtype = _model_dtype(model)
    images = images_to_tensor([c.image for c in batch], dtype)
    total = torch.zeros((), dtype=dtype)
    for r in combo:
        targets = masks_to_tensor([c.masks[r] for c in batch], dtype)
        total = total + expert_term(model, images, targets, r, smooth)
    return total


def finetune_loss(model, batch: Sequence[tuple[np.ndarray, np.ndarray]], new_expert: int,
                  smooth: float = DEFAULT_SMOOTH) -> torch.Tensor:
    """Sum over ``(image, mask)`` pairs of the Dice loss of the new expert's branch."""
    batch = list(batch)
    if int(new_expert) not in model.experts:
        raise UnknownExpertError(f"model has no branch for expert {new_expert}")
    dtype = _model_dtype(model)
    if not batch:
        return torch.zeros((), dtype=dtype)
    images = images_to_tensor([x for x, _ in batch], dtype)
    targets = masks_to_tensor([y for _, y in batch], dtype)
    return expert_term(model, images, targets, int(new_expert), smooth)


def split_targets(batch: Sequence[AnnotatedCase], combo: Sequence[int]) -> Mapping[int, list[np.ndarray]]:
    return {int(r): [c.masks[int(r)] for c in batch] for r in combo}
