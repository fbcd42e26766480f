"""U-Net with a ResNet-18-shaped encoder and expert-conditioned instance norm.

Every normalisation layer standardises each sample and channel on its own and
then applies a per-channel scale/shift picked by the expert id. Those
scale/shift vectors are the only expert-specific parameters; convolutions,
the head and everything else are shared by all experts.

Parameter names encode the partition: expert parameters are named
``...gamma.<id>`` / ``...beta.<id>``.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, UnknownExpertError

DOWNSAMPLINGS = 5  # stride-2 stem, max-pool, three strided stages


@dataclass(frozen=True)
class ModelConfig:
    input_size: tuple[int, int] = (192, 192)
    in_channels: int = 1
    base_width: int = 64
    stage_depths: tuple[int, ...] = (2, 2, 2, 2)
    decoder_widths: tuple[int, ...] = (256, 128, 64, 32, 16)
    experts: tuple[int, ...] = (1,)
    eps: float = 1e-5
    condition: str = "all"  # or "decoder": encoder norms use one shared affine

    def __post_init__(self):
        for name in ("input_size", "stage_depths", "decoder_widths", "experts"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.experts) < 1 or len(set(self.experts)) != len(self.experts):
            raise ConfigError(f"experts must be a non-empty list of distinct ids, got {self.experts}")
        if min(self.experts) < 1:
            raise ConfigError("expert ids must be >= 1")
        if self.base_width < 1 or self.in_channels < 1 or min(self.decoder_widths, default=0) < 1:
            raise ConfigError("channel widths must be positive")
        if len(self.stage_depths) != 4 or min(self.stage_depths) < 1:
            raise ConfigError("stage_depths must list four positive block counts")
        if len(self.decoder_widths) != DOWNSAMPLINGS:
            raise ConfigError(f"decoder_widths must have {DOWNSAMPLINGS} entries")
        factor = 2**DOWNSAMPLINGS
        if any(s % factor for s in self.input_size):
            raise ConfigError(f"input size {self.input_size} must be divisible by {factor}")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.condition not in ("all", "decoder"):
            raise ConfigError(f"condition must be 'all' or 'decoder', got {self.condition!r}")

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @classmethod
    def desk(cls, experts=(1,), **overrides) -> "ModelConfig":
        """CPU-sized model: 64x64 input, base width 8."""
        params = dict(input_size=(64, 64), base_width=8, decoder_widths=(32, 16, 8, 8, 8), experts=tuple(experts))
        params.update(overrides)
        return cls(**params)

    @classmethod
    def paper(cls, experts=(1,), **overrides) -> "ModelConfig":
        params = dict(experts=tuple(experts))
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        return asdict(self)


class ConditionalInstanceNorm2d(nn.Module):
    """Instance norm whose affine parameters are selected by expert id."""

    def __init__(self, num_features: int, experts: Iterable[int], eps: float = 1e-5):
        super().__init__()
        self.num_features = num_features
        self.eps = eps
        self.gamma = nn.ParameterDict()
        self.beta = nn.ParameterDict()
        for r in experts:
            self.add_expert(r)

    @property
    def experts(self) -> list[int]:
        return sorted(int(k) for k in self.gamma.keys())

    def add_expert(self, expert: int, gamma=None, beta=None):
        key = str(int(expert))
        gamma = torch.ones(self.num_features) if gamma is None else gamma.detach().clone()
        beta = torch.zeros(self.num_features) if beta is None else beta.detach().clone()
        self.gamma[key] = nn.Parameter(gamma)
        self.beta[key] = nn.Parameter(beta)

    def remove_expert(self, expert: int):
        key = str(int(expert))
        del self.gamma[key]
        del self.beta[key]

    def forward(self, x, expert: int):
        key = str(int(expert))
        if key not in self.gamma:
            raise UnknownExpertError(f"no branch for expert {expert}; available {self.experts}")
        x = F.instance_norm(x, eps=self.eps)
        return x * self.gamma[key].view(1, -1, 1, 1) + self.beta[key].view(1, -1, 1, 1)


class SharedInstanceNorm2d(ConditionalInstanceNorm2d):
    """Unconditioned variant used when only decoder norms are expert-specific."""

    SHARED_KEY = 0

    def __init__(self, num_features, experts=(), eps=1e-5):
        super().__init__(num_features, (self.SHARED_KEY,), eps)

    def add_expert(self, expert, gamma=None, beta=None):
        if not len(self.gamma):
            super().add_expert(self.SHARED_KEY)

    def remove_expert(self, expert):
        pass

    def forward(self, x, expert):
        return super().forward(x, self.SHARED_KEY)


class BasicBlock(nn.Module):
    def __init__(self, c_in, c_out, stride, norm):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.norm1 = norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.norm2 = norm(c_out)
        self.downsample = None
        if stride != 1 or c_in != c_out:
            self.downsample = nn.Conv2d(c_in, c_out, 1, stride, bias=False)
            self.norm_down = norm(c_out)

    def forward(self, x, expert):
        out = F.relu(self.norm1(self.conv1(x), expert))
        out = self.norm2(self.conv2(out), expert)
        identity = x if self.downsample is None else self.norm_down(self.downsample(x), expert)
        return F.relu(out + identity)


class DecoderBlock(nn.Module):
    def __init__(self, c_in, c_out, norm):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, 1, 1, bias=False)
        self.norm1 = norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.norm2 = norm(c_out)

    def forward(self, x, skip, expert):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        x = F.relu(self.norm1(self.conv1(x), expert))
        return F.relu(self.norm2(self.conv2(x), expert))


class CINUNet(nn.Module):
    """Encoder: 7x7/2 stem, 3x3/2 max-pool, four residual stages (stride 1, 2, 2, 2).

    Decoder: five upsampling blocks; the first four concatenate the skip from
    layer3, layer2, layer1 and the stem, the last restores full resolution.
    A 1x1 convolution produces one logit per pixel.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        experts = cfg.experts

        def cond(c):
            return ConditionalInstanceNorm2d(c, experts, cfg.eps)

        enc_norm = cond if cfg.condition == "all" else (lambda c: SharedInstanceNorm2d(c, eps=cfg.eps))
        w = cfg.base_width
        self.stem = nn.Conv2d(cfg.in_channels, w, 7, 2, 3, bias=False)
        self.stem_norm = enc_norm(w)
        widths = [w, 2 * w, 4 * w, 8 * w]
        self.stages = nn.ModuleList()
        c_prev = w
        for i, (c, depth) in enumerate(zip(widths, cfg.stage_depths)):
            blocks = [BasicBlock(c_prev, c, 1 if i == 0 else 2, enc_norm)]
            blocks += [BasicBlock(c, c, 1, enc_norm) for _ in range(depth - 1)]
            self.stages.append(nn.ModuleList(blocks))
            c_prev = c
        skips = [widths[2], widths[1], widths[0], w, 0]
        self.decoder = nn.ModuleList()
        for c_skip, c_out in zip(skips, cfg.decoder_widths):
            self.decoder.append(DecoderBlock(c_prev + c_skip, c_out, cond))
            c_prev = c_out
        self.head = nn.Conv2d(c_prev, 1, 1)

    @property
    def experts(self) -> list[int]:
        return sorted(set().union(*(set(m.experts) for m in self.conditioned_norms())))

    def norms(self) -> list[ConditionalInstanceNorm2d]:
        return [m for m in self.modules() if isinstance(m, ConditionalInstanceNorm2d)]

    def conditioned_norms(self) -> list[ConditionalInstanceNorm2d]:
        return [m for m in self.norms() if not isinstance(m, SharedInstanceNorm2d)]

    def forward(self, x, expert: int):
        h = F.relu(self.stem_norm(self.stem(x), expert))
        skips = [h]
        h = F.max_pool2d(h, 3, 2, 1)
        for stage in self.stages:
            for block in stage:
                h = block(h, expert)
            skips.append(h)
        # deepest stage output feeds the decoder; the rest are skips, deepest first
        skip_iter = skips[-2::-1] + [None]
        for block, skip in zip(self.decoder, skip_iter):
            h = block(h, skip, expert)
        return self.head(h)


# ------------------------------------------------------------- partitions


@dataclass
class ParamPartition:
    shared: dict[str, nn.Parameter]
    per_expert: dict[int, list[tuple[nn.Parameter, nn.Parameter]]]
    names: dict[str, str] = field(default_factory=dict)  # name -> "shared" | "expert:<id>"

    def expert_size(self, expert: int) -> int:
        return sum(g.numel() + b.numel() for g, b in self.per_expert[expert])

    def shared_size(self) -> int:
        return sum(p.numel() for p in self.shared.values())


def _owner(name: str) -> str:
    parts = name.split(".")
    if len(parts) >= 2 and parts[-2] in ("gamma", "beta") and parts[-1] != str(SharedInstanceNorm2d.SHARED_KEY):
        return f"expert:{int(parts[-1])}"
    return "shared"


def partition(model: CINUNet) -> ParamPartition:
    """Split the model's parameters into shared and per-expert sets."""
    names = {name: _owner(name) for name, _ in model.named_parameters()}
    shared = {name: p for name, p in model.named_parameters() if names[name] == "shared"}
    per_expert = {}
    for r in model.experts:
        key = str(r)
        per_expert[r] = [(m.gamma[key], m.beta[key]) for m in model.conditioned_norms()]
    return ParamPartition(shared, per_expert, names)


def partition_manifest(model: CINUNet) -> dict[str, str]:
    return {name: _owner(name) for name, _ in model.named_parameters()}


def build_model(cfg: ModelConfig, init_seed: int = 0) -> CINUNet:
    """Construct a model with He-initialised convolutions and identity affines."""
    model = CINUNet(cfg)
    gen = torch.Generator().manual_seed(int(init_seed))
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu", generator=gen)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    return model


def forward(model: CINUNet, x, expert: int):
    return model(x, expert)


def predict_mask(model: CINUNet, x, expert: int, threshold: float = 0.5):
    """Binary prediction ``sigmoid(logits) >= threshold`` (eval mode, no grad)."""
    model.eval()
    with torch.no_grad():
        logits = model(x, expert)
    return (torch.sigmoid(logits) >= threshold).to(torch.uint8)


def masks_from_logits(logits, threshold: float = 0.5):
    return (torch.sigmoid(logits) >= threshold).to(torch.uint8)


def reinit_expert_branch(model: CINUNet, new_expert: int, mode: str = "identity", replace: bool = False,
                         source: Sequence[int] | None = None) -> CINUNet:
    """Add (in place) an affine set for ``new_expert`` and return the model.

    ``identity`` starts from scale 1 / shift 0; ``average`` takes the
    element-wise mean of the existing branches (or of ``source``). Shared
    parameters are left untouched.
    """
    new_expert = int(new_expert)
    existing = model.experts
    if new_expert in existing and not replace:
        raise ValueError(f"expert {new_expert} already has a branch (pass replace=True)")
    if mode not in ("identity", "average"):
        raise ValueError(f"unknown reinit mode {mode!r}")
    donors = [r for r in (source if source is not None else existing) if r != new_expert]
    if mode == "average" and not donors:
        raise ValueError("average initialisation needs at least one trained branch")
    for norm in model.conditioned_norms():
        gamma = beta = None
        if mode == "average":
            gamma = torch.stack([norm.gamma[str(r)].detach() for r in donors]).mean(0)
            beta = torch.stack([norm.beta[str(r)].detach() for r in donors]).mean(0)
        if new_expert in existing:
            norm.remove_expert(new_expert)
        norm.add_expert(new_expert, gamma, beta)
    experts = tuple(sorted(set(model.cfg.experts) | {new_expert}))
    model.cfg = ModelConfig(**{**model.cfg.to_dict(), "experts": experts})
    return model


def trainable_parameters(model: CINUNet, scope: str = "all", expert: int | None = None) -> list[nn.Parameter]:
    """Parameters updated under ``scope``.

    ``all``: the shared parameters plus ``expert``'s affine set;
    ``expert_only``: ``expert``'s affine set alone.
    """
    if expert is None:
        raise ValueError("an expert id is required to select parameters")
    if int(expert) not in model.experts:
        raise UnknownExpertError(f"no branch for expert {expert}; available {model.experts}")
    part = partition(model)
    own = [p for pair in part.per_expert[int(expert)] for p in pair]
    if scope == "expert_only":
        return own
    if scope == "all":
        return list(part.shared.values()) + own
    raise ValueError(f"unknown scope {scope!r}")


def clone_model(model: CINUNet) -> CINUNet:
    return copy.deepcopy(model)
