"""Training and fine-tuning loops, learning-rate schedule and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import pickle
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .augment import AugmentConfig, augment_sample, prepare_eval
from .data import AnnotatedCase, MultiExpertDataset
from .errors import ConfigError, DataError, NumericalError, UnknownExpertError
from .metrics import MetricTriple, evaluate_case, mean_metrics
from .model import (CINUNet, ModelConfig, build_model, masks_from_logits, partition_manifest,
                    reinit_expert_branch, trainable_parameters)
from .objectives import dice_loss_per_sample, images_to_tensor, masks_to_tensor

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "expertadapt-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    train_steps: int = 5000
    finetune_steps: int = 1000
    lr0: float = 0.001
    power: float = 0.9
    optimizer: str = "radam"
    seed: int = 0
    crop_size: tuple[int, int] = (192, 192)
    finetune_scope: str = "all"
    finetune_init: str = "identity"
    finetune_augment: bool = True
    augment: bool = True
    smooth: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "crop_size", tuple(int(s) for s in self.crop_size))
        if self.batch_size < 1 or self.train_steps < 1 or self.finetune_steps < 1:
            raise ConfigError("batch_size and step counts must be >= 1")
        if self.lr0 < 0:
            raise ConfigError("lr0 must be non-negative")
        if self.power <= 0:
            raise ConfigError("power must be positive")
        if self.optimizer not in ("radam", "adam"):
            raise ConfigError(f"optimizer must be 'radam' or 'adam', got {self.optimizer!r}")
        if self.finetune_scope not in ("all", "expert_only"):
            raise ConfigError(f"finetune_scope must be 'all' or 'expert_only', got {self.finetune_scope!r}")
        if self.finetune_init not in ("identity", "average"):
            raise ConfigError(f"finetune_init must be 'identity' or 'average', got {self.finetune_init!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_schedule(step: int, cfg: TrainConfig, total_steps: int) -> float:
    """Polynomial annealing ``lr0 * (1 - step/total) ** power``, zero past the end."""
    if step < 0:
        raise ValueError("step must be non-negative")
    frac = min(step, total_steps) / total_steps
    return cfg.lr0 * (1.0 - frac) ** cfg.power


def config_hash(*parts) -> str:
    """Stable short hash of JSON-serialisable parts."""
    blob = json.dumps(parts, sort_keys=True, default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(obj):
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serialisable: {type(obj)}")


def derive_seed(*keys) -> int:
    """Deterministic 31-bit seed from a tuple of keys."""
    digest = hashlib.sha256(json.dumps(keys, default=str).encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


@dataclass
class Checkpoint:
    model: CINUNet
    model_config: ModelConfig
    train_config: TrainConfig
    step: int = 0
    loss_log: list[dict] = field(default_factory=list)
    rng_state: Optional[dict] = None
    stage: str = "train"

    def save(self, path) -> Path:
        return save_checkpoint(self, path)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": ckpt.model.cfg.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "state_dict": ckpt.model.state_dict(),
        "partition": partition_manifest(ckpt.model),
        "step": ckpt.step,
        "loss_log": ckpt.loss_log,
        "rng_state": ckpt.rng_state,
        "stage": ckpt.stage,
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    """Load a checkpoint, rebuilding the model and verifying its partition."""
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, pickle.UnpicklingError, EOFError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {payload.get('version')}")
    model_cfg = ModelConfig(**payload["model_config"])
    model = build_model(model_cfg)
    expected = partition_manifest(model)
    if expected != payload["partition"]:
        diff = sorted(set(expected.items()) ^ set(payload["partition"].items()))[:5]
        raise DataError(f"checkpoint partition does not match the architecture: {diff}")
    model.load_state_dict(payload["state_dict"])
    return Checkpoint(model, model_cfg, TrainConfig(**payload["train_config"]), payload["step"],
                      payload["loss_log"], payload["rng_state"], payload.get("stage", "train"))


# ------------------------------------------------------------------ loops


def _make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "radam":
        return torch.optim.RAdam(params, lr=cfg.lr0)
    return torch.optim.Adam(params, lr=cfg.lr0)


def _augment_config(cfg: TrainConfig, augment: Optional[AugmentConfig], enabled: bool) -> AugmentConfig:
    if not enabled:
        return AugmentConfig.identity(cfg.crop_size)
    base = augment or AugmentConfig()
    return replace(base, crop_size=cfg.crop_size)


class BatchSampler:
    """Uniform sampling with replacement, one draw of ``batch_size`` per step."""

    def __init__(self, n_items: int, batch_size: int, seed: int):
        if n_items < 1:
            raise DataError("cannot sample batches from an empty set")
        self.n_items = n_items
        self.batch_size = batch_size
        self.rng = np.random.default_rng([seed, 0x5A])
        self.counts = np.zeros(n_items, dtype=np.int64)

    def next(self) -> np.ndarray:
        picks = self.rng.integers(0, self.n_items, size=self.batch_size)
        np.add.at(self.counts, picks, 1)
        return picks


def _loop(model: CINUNet, cases: Sequence[AnnotatedCase], experts: Sequence[int], params, cfg: TrainConfig,
          steps: int, aug: AugmentConfig, seed: int, stage: str, callback=None) -> list[dict]:
    """Shared optimisation loop; each expert's term is back-propagated in turn."""
    model.train()
    optimizer = _make_optimizer(params, cfg)
    sampler = BatchSampler(len(cases), cfg.batch_size, seed)
    dtype = next(model.parameters()).dtype
    norm = float(cfg.batch_size * len(experts))
    identity_aug = aug == AugmentConfig.identity(aug.crop_size)
    loss_log = []
    for step in range(steps):
        lr = lr_schedule(step, cfg, steps)
        for group in optimizer.param_groups:
            group["lr"] = lr
        picks = sampler.next()
        batch = []
        for slot, i in enumerate(picks):
            case = cases[int(i)]
            if identity_aug:
                batch.append(prepare_eval(case, aug.crop_size))
            else:
                batch.append(augment_sample(case, aug, [seed, step, slot]))
        images = images_to_tensor([c.image for c in batch], dtype)
        optimizer.zero_grad(set_to_none=True)
        raw = 0.0
        for r in experts:
            targets = masks_to_tensor([c.masks[r] for c in batch], dtype)
            term = dice_loss_per_sample(model(images, r), targets, cfg.smooth).sum()
            value = term.item()
            if not math.isfinite(value):
                ckpt = Checkpoint(model, model.cfg, cfg, step, loss_log, None, stage)
                raise NumericalError(f"non-finite loss at step {step} (expert {r})", ckpt)
            (term / norm).backward()
            raw += value
        optimizer.step()
        entry = {"step": step, "lr": lr, "loss_raw": raw, "loss_norm": raw / norm}
        loss_log.append(entry)
        if callback is not None:
            callback(entry)
    return loss_log


def train(model: CINUNet, dataset: MultiExpertDataset, combo: Sequence[int], cfg: TrainConfig,
          augment: Optional[AugmentConfig] = None, callback: Optional[Callable[[dict], None]] = None) -> Checkpoint:
    """Multi-expert training stage: minimise the summed Dice loss over ``combo``."""
    combo = [int(r) for r in combo]
    if not combo:
        raise ValueError("combo must not be empty")
    missing = set(combo) - set(dataset.roster)
    if missing:
        raise UnknownExpertError(f"dataset is not annotated by experts {sorted(missing)}")
    absent = set(combo) - set(model.experts)
    if absent:
        raise UnknownExpertError(f"model has no branches for experts {sorted(absent)}")
    aug = _augment_config(cfg, augment, cfg.augment)
    params = [p for p in model.parameters()]
    # unused branches get no gradient, so the optimiser leaves them untouched
    log_ = _loop(model, list(dataset.cases), combo, params, cfg, cfg.train_steps, aug, cfg.seed, "train", callback)
    model.eval()
    return Checkpoint(model, model.cfg, cfg, cfg.train_steps, log_, {"seed": cfg.seed}, "train")


def finetune(checkpoint: Checkpoint, new_data: Sequence[tuple[np.ndarray, np.ndarray]], new_expert: int,
             cfg: TrainConfig, augment: Optional[AugmentConfig] = None,
             callback: Optional[Callable[[dict], None]] = None) -> Checkpoint:
    """Adapt a trained model to ``new_expert`` from a few ``(image, mask)`` pairs.

    The input checkpoint is not modified. A new affine set is created for the
    expert (``cfg.finetune_init``) and, depending on ``cfg.finetune_scope``,
    either everything shared plus that set or that set alone is optimised.
    """
    new_data = list(new_data)
    if not new_data:
        raise DataError("fine-tuning needs at least one annotated sample")
    new_expert = int(new_expert)
    model = build_model(checkpoint.model.cfg)
    model.load_state_dict(checkpoint.model.state_dict())
    reinit_expert_branch(model, new_expert, cfg.finetune_init, replace=new_expert in model.experts)
    selected = trainable_parameters(model, cfg.finetune_scope, new_expert)
    chosen = {id(p) for p in selected}
    for p in model.parameters():
        p.requires_grad_(id(p) in chosen)
    cases = [AnnotatedCase(i + 1, x, {new_expert: y}) for i, (x, y) in enumerate(new_data)]
    aug = _augment_config(cfg, augment, cfg.finetune_augment)
    log_ = _loop(model, cases, [new_expert], selected, cfg, cfg.finetune_steps, aug, cfg.seed, "finetune", callback)
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    return Checkpoint(model, model.cfg, cfg, cfg.finetune_steps, log_, {"seed": cfg.seed}, "finetune")


@dataclass(frozen=True)
class EvalResult:
    mean: MetricTriple
    n_undefined: int
    per_case: tuple[MetricTriple, ...]


def predict_cases(model: CINUNet, cases: Sequence[AnnotatedCase], expert: int, crop_size=None,
                  threshold: float = 0.5, batch_size: int = 32) -> list[np.ndarray]:
    model.eval()
    dtype = next(model.parameters()).dtype
    crop = crop_size or model.cfg.input_size
    prepared = [prepare_eval(c, crop) for c in cases]
    out = []
    with torch.no_grad():
        for start in range(0, len(prepared), batch_size):
            chunk = prepared[start:start + batch_size]
            logits = model(images_to_tensor([c.image for c in chunk], dtype), expert)
            out.extend(masks_from_logits(logits, threshold)[:, 0].numpy())
    return out


def evaluate_model(checkpoint, test_set: MultiExpertDataset, expert_branch: int, ref_expert: int,
                   crop_size=None) -> EvalResult:
    """Mean Dice/ASSD/95HD of ``expert_branch``'s predictions against ``ref_expert``'s masks."""
    model = checkpoint.model if isinstance(checkpoint, Checkpoint) else checkpoint
    if int(expert_branch) not in model.experts:
        raise UnknownExpertError(f"model has no branch for expert {expert_branch}")
    if int(ref_expert) not in test_set.roster:
        raise UnknownExpertError(f"test set has no masks from expert {ref_expert}")
    crop = crop_size or model.cfg.input_size
    cases = list(test_set.cases)
    preds = predict_cases(model, cases, int(expert_branch), crop)
    triples = []
    for case, pred in zip(cases, preds):
        ref = prepare_eval(case, crop).masks[int(ref_expert)]
        triples.append(evaluate_case(pred, ref, test_set.spacing))
    mean, n_undefined = mean_metrics(triples)
    return EvalResult(mean, n_undefined, tuple(triples))


def train_from_scratch(dataset: MultiExpertDataset, combo: Sequence[int], model_cfg: ModelConfig,
                       cfg: TrainConfig, augment: Optional[AugmentConfig] = None, init_seed: Optional[int] = None) -> Checkpoint:
    """Build a model with branches for ``combo`` and train it."""
    model_cfg = replace(model_cfg, experts=tuple(int(r) for r in combo))
    model = build_model(model_cfg, cfg.seed if init_seed is None else init_seed)
    return train(model, dataset, combo, cfg, augment)
