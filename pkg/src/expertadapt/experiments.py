"""Experiment grids, configuration files and the on-disk results ledger.

Every grid cell writes one JSON file under ``<output_dir>/<experiment>/``.
A cell's file records a hash of everything that determines its outcome, so
re-running with ``resume`` skips cells whose hash still matches. Tables are
rendered from the ledger alone.

Cells that repeat work across experiments (pretrained models, from-scratch
baselines) are cached under ``<output_dir>/_cache``.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .augment import AugmentConfig
from .data import (MultiExpertDataset, expert_combinations, load_manifest, restrict, sample_indices,
                   starting_indices)
from .errors import ConfigError, DataError
from .model import ModelConfig, build_model
from .stats import RunResult, Table, aggregate, build_table, emit_table, highlight, underline
from .synth import ExpertStyle, SynthConfig, generate_dataset
from .training import (Checkpoint, TrainConfig, config_hash, derive_seed, evaluate_model, finetune,
                       load_checkpoint, save_checkpoint, train)

log = logging.getLogger(__name__)

KINDS = ("expert_matrix", "ann_count", "expert_count")
PROFILES = ("desk", "paper")
LEDGER_VERSION = 1


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = "ann_count"
    profile: str = "desk"
    dataset_root: Optional[str] = None
    output_dir: str = "results"
    seed: int = 0
    new_experts: tuple[int, ...] = (6, 7)
    annotation_experts: tuple[int, ...] = (1, 2, 3, 4, 5)
    matrix_experts: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7)
    ann_counts: tuple[int, ...] = (5, 10, 15, 20, 25, 30, 34)
    expert_counts: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    pretrain_experts: int = 3
    finetune_count: int = 10
    n_ways: int = 10
    n_seeds: int = 10
    alpha: float = 0.05
    welch: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        for name in ("new_experts", "annotation_experts", "matrix_experts", "ann_counts", "expert_counts"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.kind not in KINDS:
            raise ConfigError(f"kind: must be one of {', '.join(KINDS)}, got {self.kind!r}")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile: must be one of {', '.join(PROFILES)}, got {self.profile!r}")
        if not self.new_experts:
            raise ConfigError("new_experts: must not be empty")
        overlap = set(self.new_experts) & set(self.annotation_experts)
        if overlap:
            raise ConfigError(f"new_experts: {sorted(overlap)} are also annotation experts")
        if self.n_ways < 1 or self.n_seeds < 1:
            raise ConfigError("n_ways and n_seeds must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha: must be in (0, 1)")
        n_ann = len(self.annotation_experts)
        if not 1 <= self.pretrain_experts <= n_ann:
            raise ConfigError(f"pretrain_experts: must be in [1, {n_ann}]")
        bad = [k for k in self.expert_counts if not 0 <= k <= n_ann]
        if bad:
            raise ConfigError(f"expert_counts: {bad} outside [0, {n_ann}]")
        if any(n < 1 for n in self.ann_counts) or self.finetune_count < 1:
            raise ConfigError("ann_counts and finetune_count must be >= 1")
        if self.dataset_root is None:
            self.check_counts(self.synth.n_cases - self.synth.n_test)
        if tuple(self.train.crop_size) != tuple(self.model.input_size):
            raise ConfigError(f"train.crop_size {self.train.crop_size} must equal model.input_size {self.model.input_size}")

    def check_counts(self, n_train: int) -> None:
        for key, values in (("ann_counts", self.ann_counts), ("finetune_count", (self.finetune_count,))):
            over = [n for n in values if n > n_train]
            if over:
                raise ConfigError(f"{key}: {over} exceed the {n_train} training cases")
        if self.n_ways > n_train:
            raise ConfigError(f"n_ways: {self.n_ways} exceeds the {n_train} training cases")

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "to_dict"):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            d[f.name] = value
        d["model"].pop("experts")
        return _listify(d)


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


def profile_defaults(profile: str) -> dict:
    """Defaults for a profile, as nested plain dicts (the config file schema)."""
    if profile == "paper":
        size = (192, 192)
        return {
            "profile": "paper",
            "train": TrainConfig(crop_size=size).to_dict(),
            "model": _without_experts(ModelConfig.paper()),
            "augment": AugmentConfig(crop_size=size).to_dict(),
            "synth": SynthConfig(n_cases=39, height=192, width=192, n_test=5).to_dict(),
        }
    if profile == "desk":
        size = (64, 64)
        return {
            "profile": "desk",
            "ann_counts": [5, 34],
            "expert_counts": [0, 1, 3, 5],
            "n_seeds": 3,
            "train": TrainConfig(batch_size=4, train_steps=600, finetune_steps=200, crop_size=size).to_dict(),
            "model": _without_experts(ModelConfig.desk()),
            "augment": AugmentConfig(crop_size=size).to_dict(),
            "synth": SynthConfig(n_cases=50, height=64, width=64, n_test=16).to_dict(),
        }
    raise ConfigError(f"profile: must be one of {', '.join(PROFILES)}, got {profile!r}")


def _without_experts(cfg: ModelConfig) -> dict:
    d = cfg.to_dict()
    d.pop("experts")
    return d


_SECTIONS = {"train": TrainConfig, "model": ModelConfig, "augment": AugmentConfig, "synth": SynthConfig}


def _merge(base: dict, overrides: Mapping, where: str = "") -> dict:
    out = dict(base)
    for key, value in overrides.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict) and key in _SECTIONS:
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = value
    return out


def canonical_config(raw: Mapping, profile: Optional[str] = None) -> dict:
    """Fill profile defaults into a raw config dict and reject unknown keys."""
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a JSON object")
    profile = profile or raw.get("profile", "desk")
    base = ExperimentSpec().to_dict()
    base = _merge(base, profile_defaults(profile))
    merged = _merge(base, raw)
    merged["profile"] = profile
    return _listify(merged)


def spec_from_dict(raw: Mapping, profile: Optional[str] = None) -> ExperimentSpec:
    d = canonical_config(raw, profile)
    try:
        sections = {}
        for key, cls in _SECTIONS.items():
            section = dict(d.pop(key))
            if cls is SynthConfig:
                section["styles"] = tuple(ExpertStyle(**s) if isinstance(s, Mapping) else s for s in section["styles"])
            sections[key] = cls(**section)
        return ExperimentSpec(**d, **sections)
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def load_config(path, profile: Optional[str] = None) -> ExperimentSpec:
    """Parse and validate a JSON experiment config."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return spec_from_dict(raw, profile)


def serialize_spec(spec: ExperimentSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n"


# ------------------------------------------------------------------ ledger


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


class Ledger:
    """``<root>/<experiment>/<run-id>.json``, one RunResult per file."""

    def __init__(self, root, experiment: str):
        self.dir = Path(root) / experiment
        self.experiment = experiment

    def path(self, run_id: str) -> Path:
        return self.dir / f"{run_id}.json"

    def lookup(self, run_id: str, cell_hash: str) -> Optional[RunResult]:
        path = self.path(run_id)
        if not path.exists():
            return None
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError:
            return None
        if doc.get("provenance", {}).get("config_hash") != cell_hash:
            return None
        return RunResult.from_dict(doc)

    def write(self, result: RunResult) -> Path:
        path = self.path(result.run_id)
        _write_json(path, result.to_dict())
        return path

    def runs(self) -> list[RunResult]:
        if not self.dir.is_dir():
            raise DataError(f"no ledger at {self.dir}")
        return [RunResult.from_dict(json.loads(p.read_text())) for p in sorted(self.dir.glob("*.json"))]


class Cache:
    """Content-addressed store for trained checkpoints and evaluated metrics."""

    def __init__(self, root):
        self.dir = Path(root) / "_cache"

    def checkpoint(self, key: str, build: Callable[[], Checkpoint]) -> Checkpoint:
        path = self.dir / f"{key}.pt"
        if path.exists():
            return load_checkpoint(path)
        ckpt = build()
        save_checkpoint(ckpt, path)
        return ckpt

    def metrics(self, key: str, compute: Callable[[], dict]) -> dict:
        path = self.dir / f"{key}.json"
        if path.exists():
            return json.loads(path.read_text())
        value = compute()
        _write_json(path, value)
        return value


# ----------------------------------------------------------------- runner


def load_data(spec: ExperimentSpec) -> tuple[MultiExpertDataset, MultiExpertDataset]:
    """Return (train split, test split) for a spec."""
    if spec.dataset_root is None:
        ds = generate_dataset(spec.synth)
    else:
        ds = load_manifest(spec.dataset_root)
    if "test" not in ds.splits:
        raise DataError("dataset has no 'test' split")
    test = ds.split("test")
    if "train" in ds.splits:
        train_ds = ds.split("train")
    else:
        held = set(test.case_indices)
        train_ds = MultiExpertDataset(tuple(c for c in ds if c.case_index not in held), ds.roster, ds.spacing)
    spec.check_counts(train_ds.n_cases)
    return train_ds, test


class Runner:
    """Executes grid cells for one spec, consulting the ledger and the cache."""

    def __init__(self, spec: ExperimentSpec, resume: bool = True, data=None, progress: Optional[Callable[[str], None]] = None):
        self.spec = spec
        self.resume = resume
        self.train_ds, self.test_ds = data if data is not None else load_data(spec)
        self.root = Path(spec.output_dir)
        self.cache = Cache(self.root)
        self.progress = progress or (lambda msg: log.info(msg))
        self.data_key = config_hash(spec.dataset_root or spec.synth.to_dict())
        self.n_train = self.train_ds.n_cases
        self.ways = starting_indices(self.n_train, spec.n_ways)

    def _needs(self, experts: Sequence[int]) -> None:
        missing = sorted(set(experts) - set(self.train_ds.roster))
        if missing:
            raise DataError(f"dataset has no masks from experts {missing}")

    def _model_cfg(self, experts: Sequence[int]) -> ModelConfig:
        return replace(self.spec.model, experts=tuple(experts))

    def _base_key(self) -> list:
        s = self.spec
        return [self.data_key, s.model.to_dict(), s.augment.to_dict()]

    # shared building blocks

    def pretrained(self, combo: Sequence[int]) -> Checkpoint:
        """Multi-expert training on the full training split (cached)."""
        combo = tuple(combo)
        seed = derive_seed(self.spec.seed, "pretrain", combo)
        cfg = replace(self.spec.train, seed=seed)
        key = config_hash("pretrain", self._base_key(), cfg, combo)

        def build():
            self.progress(f"pretrain combo {combo}")
            model = build_model(self._model_cfg(combo), seed)
            return train(model, self._only(self.train_ds, combo), combo, cfg, self.spec.augment)

        return self.cache.checkpoint(key, build)

    @staticmethod
    def _only(ds: MultiExpertDataset, experts) -> MultiExpertDataset:
        # dropping unused masks keeps augmentation cheap
        return restrict(ds, experts, ds.case_indices)

    def _sample(self, way: int, count: int) -> MultiExpertDataset:
        return self.train_ds.at_positions(sample_indices(self.ways[way - 1], count, self.n_train))

    def _evaluate(self, ckpt: Checkpoint, branch: int, ref: int) -> dict:
        res = evaluate_model(ckpt, self.test_ds, branch, ref)
        return {"metrics": res.mean.as_dict(), "n_undefined": res.n_undefined}

    def scratch(self, new_expert: int, way: int, count: int, refs: Sequence[int] = ()) -> dict:
        """Single-expert training from random initialisation on ``count`` sampled cases."""
        seed = derive_seed(self.spec.seed, "scratch", way, count)
        cfg = replace(self.spec.train, seed=seed)
        key = config_hash("scratch", self._base_key(), cfg, new_expert, way, count, self.ways)

        def compute():
            self.progress(f"scratch u={new_expert} way={way} n={count}")
            subset = self._only(self._sample(way, count), (new_expert,))
            model = build_model(self._model_cfg((new_expert,)), seed)
            ckpt = train(model, subset, (new_expert,), cfg, self.spec.augment)
            return self._evaluate(ckpt, new_expert, new_expert) | {"seed": seed}

        return self.cache.metrics(key, compute)

    def adapted(self, combo: Sequence[int], new_expert: int, way: int, count: int) -> dict:
        """Pretrain on ``combo``, fine-tune a fresh branch on ``count`` new-expert cases."""
        combo = tuple(combo)
        seed = derive_seed(self.spec.seed, "finetune", way, count)
        cfg = replace(self.spec.train, seed=seed)
        key = config_hash("adapted", self._base_key(), self.spec.train, cfg, combo, new_expert, way, count,
                          self.ways, self.spec.seed)

        def compute():
            base = self.pretrained(combo)
            self.progress(f"finetune combo {combo} u={new_expert} way={way} n={count}")
            subset = self._sample(way, count)
            pairs = [(c.image, c.masks[new_expert]) for c in subset]
            ckpt = finetune(base, pairs, new_expert, cfg, self.spec.augment)
            return self._evaluate(ckpt, new_expert, new_expert) | {"seed": seed}

        return self.cache.metrics(key, compute)

    def _cell(self, ledger: Ledger, template: RunResult, cell_hash: str, compute: Callable[[], dict]) -> RunResult:
        if self.resume:
            hit = ledger.lookup(template.run_id, cell_hash)
            if hit is not None:
                return hit
        out = compute()
        prov = {"config_hash": cell_hash, "seed": out.get("seed"), "base_seed": self.spec.seed,
                "profile": self.spec.profile, "ledger_version": LEDGER_VERSION}
        result = replace(template, metrics=out["metrics"], n_undefined=out["n_undefined"], provenance=prov)
        ledger.write(result)
        return result

    # experiments

    def run_expert_matrix(self) -> list[RunResult]:
        spec = self.spec
        self._needs(set(spec.matrix_experts) | set(spec.new_experts))
        ledger = Ledger(self.root, "expert_matrix")
        results = []
        for rep in range(1, spec.n_seeds + 1):
            seed = derive_seed(spec.seed, "matrix", rep)
            cfg = replace(spec.train, seed=seed)
            for r in spec.matrix_experts:
                key = config_hash("matrix", self._base_key(), cfg, r)
                pending = []
                for u in spec.new_experts:
                    tmpl = RunResult("expert_matrix", f"Exp_{r}", (r,), rep, u, {})
                    hit = ledger.lookup(tmpl.run_id, key) if self.resume else None
                    pending.append((tmpl, hit))
                if all(hit is not None for _, hit in pending):
                    results.extend(hit for _, hit in pending)
                    continue
                self.progress(f"matrix train Exp_{r} repeat {rep}")
                model = build_model(self._model_cfg((r,)), seed)
                ckpt = train(model, self._only(self.train_ds, (r,)), (r,), cfg, spec.augment)
                for tmpl, _ in pending:
                    out = self._evaluate(ckpt, r, tmpl.new_expert) | {"seed": seed}
                    results.append(self._cell(ledger, tmpl, key, lambda o=out: o))
        return results

    def run_ann_count(self) -> list[RunResult]:
        spec = self.spec
        self._needs(set(spec.annotation_experts) | set(spec.new_experts))
        ledger = Ledger(self.root, "ann_count")
        combos = expert_combinations(spec.annotation_experts, spec.pretrain_experts)
        results = []
        for u in spec.new_experts:
            for n in spec.ann_counts:
                for way in range(1, spec.n_ways + 1):
                    for combo in combos:
                        tmpl = RunResult("ann_count", f"n={n}", combo, way, u, {}, arm="w")
                        key = config_hash("cell", self._base_key(), spec.train, spec.seed, tmpl.run_id)
                        results.append(self._cell(ledger, tmpl, key, lambda c=combo: self.adapted(c, u, way, n)))
                        # the baseline ignores the combo; one cached run fills the whole row
                        tmpl = replace(tmpl, arm="wo")
                        key = config_hash("cell", self._base_key(), spec.train, spec.seed, tmpl.run_id)
                        results.append(self._cell(ledger, tmpl, key, lambda: self.scratch(u, way, n)))
        return results

    def run_expert_count(self) -> list[RunResult]:
        spec = self.spec
        self._needs(set(spec.annotation_experts) | set(spec.new_experts))
        ledger = Ledger(self.root, "expert_count")
        n = spec.finetune_count
        results = []
        for u in spec.new_experts:
            for k in spec.expert_counts:
                combos = expert_combinations(spec.annotation_experts, k) if k else [()]
                for way in range(1, spec.n_ways + 1):
                    for combo in combos:
                        tmpl = RunResult("expert_count", f"k={k}", combo, way, u, {})
                        key = config_hash("cell", self._base_key(), spec.train, spec.seed, tmpl.run_id)
                        if k:
                            compute = lambda c=combo: self.adapted(c, u, way, n)
                        else:
                            compute = lambda: self.scratch(u, way, n)
                        results.append(self._cell(ledger, tmpl, key, compute))
        return results

    def run(self) -> list[RunResult]:
        return getattr(self, f"run_{self.spec.kind}")()


def run_experiment(spec: ExperimentSpec, resume: bool = True, data=None, progress=None) -> list[Table]:
    """Run (or resume) ``spec`` and return its tables, rendered from the ledger."""
    Runner(spec, resume, data, progress).run()
    return tables_from_ledger(spec.output_dir, spec.kind, spec)


def run_expert_matrix(spec: ExperimentSpec, **kw) -> list[Table]:
    return run_experiment(replace(spec, kind="expert_matrix"), **kw)


def run_ann_count(spec: ExperimentSpec, **kw) -> list[Table]:
    return run_experiment(replace(spec, kind="ann_count"), **kw)


def run_expert_count(spec: ExperimentSpec, **kw) -> list[Table]:
    return run_experiment(replace(spec, kind="expert_count"), **kw)


# ----------------------------------------------------------------- tables


def _grouped(runs: Sequence[RunResult], **match) -> dict[str, list[RunResult]]:
    rows: dict[str, list[RunResult]] = {}
    for r in runs:
        if all(getattr(r, k) == v for k, v in match.items()):
            rows.setdefault(r.row, []).append(r)
    return rows


def _row_order(label: str):
    digits = "".join(ch for ch in label if ch.isdigit())
    return (int(digits) if digits else 0, label)


def _expected(spec: Optional[ExperimentSpec], kind: str) -> Optional[dict]:
    """Expected (row -> number of cells) for a complete grid, or None if unknown."""
    if spec is None:
        return None
    if kind == "expert_matrix":
        return {f"Exp_{r}": spec.n_seeds for r in spec.matrix_experts}
    if kind == "ann_count":
        n_combos = len(expert_combinations(spec.annotation_experts, spec.pretrain_experts))
        return {f"n={n}": 2 * spec.n_ways * n_combos for n in spec.ann_counts}
    return {f"k={k}": spec.n_ways * (len(expert_combinations(spec.annotation_experts, k)) if k else 1)
            for k in spec.expert_counts}


def _check_complete(rows: Mapping[str, list], expected: Optional[dict], what: str) -> None:
    if expected is None:
        return
    problems = []
    for label, count in expected.items():
        have = len(rows.get(label, []))
        if have != count:
            problems.append(f"{label}: {have}/{count}")
    if problems:
        raise DataError(f"incomplete grid for {what}: " + ", ".join(problems))


def tables_from_ledger(root, kind: str, spec: Optional[ExperimentSpec] = None) -> list[Table]:
    """Build the report tables of experiment ``kind`` from its ledger.

    With ``spec`` the ledger must hold exactly the spec's grid (extra rows
    from other configurations are ignored).
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment {kind!r}")
    runs = Ledger(root, kind).runs()
    if spec is not None:
        wanted = set(_expected(spec, kind))
        runs = [r for r in runs if r.row in wanted and r.new_expert in spec.new_experts
                and r.sampling_way <= (spec.n_seeds if kind == "expert_matrix" else spec.n_ways)]
    if not runs:
        raise DataError(f"ledger for {kind} under {root} is empty")
    alpha = spec.alpha if spec else 0.05
    tables = []
    for u in sorted({r.new_expert for r in runs}):
        if kind == "ann_count":
            tables.append(_ann_table(runs, u, alpha, spec))
            continue
        rows = _grouped(runs, new_expert=u)
        _check_complete(rows, _expected(spec, kind), f"{kind} expert {u}")
        labels = sorted(rows, key=_row_order)
        agg = {label: aggregate(rows[label]) for label in labels}
        if kind == "expert_matrix":
            test_kind = "unpaired"
            report = highlight(agg, "unpaired", alpha) if len(agg) > 1 else None
            if report is not None and spec is not None and spec.welch:
                report = _welch_highlight(agg, alpha)
            title = f"Single-expert training, tested on Exp_{u} (unpaired t-test)"
            header = "Train"
        else:
            test_kind = "paired"
            report = highlight(agg, "paired", alpha) if len(agg) > 1 else None
            title = f"Adaptation to Exp_{u} from k pretraining experts (paired t-test)"
            header = "Experts"
        log.debug("table %s u=%s kind=%s", kind, u, test_kind)
        tables.append(build_table(title, header, agg, report))
    return tables


def _welch_highlight(agg, alpha):
    from . import stats

    report = highlight(agg, "unpaired", alpha)
    for name, mr in report.metrics.items():
        ref = agg[mr.best].values[name]
        bold = {mr.best}
        for label in agg:
            if label == mr.best:
                continue
            res = stats.t_test(agg[label].values[name], ref, "unpaired", alpha, equal_var=False)
            mr.p_values[label] = res.p
            if res.p >= alpha:
                bold.add(label)
        mr.bold = bold
    return report


def _ann_table(runs, u, alpha, spec) -> Table:
    w = _grouped(runs, new_expert=u, arm="w")
    wo = _grouped(runs, new_expert=u, arm="wo")
    if spec is not None:
        n_combos = len(expert_combinations(spec.annotation_experts, spec.pretrain_experts))
        _check_complete(w, {f"n={n}": spec.n_ways * n_combos for n in spec.ann_counts}, f"ann_count w/ expert {u}")
        _check_complete(wo, {f"n={n}": spec.n_ways * n_combos for n in spec.ann_counts}, f"ann_count w/o expert {u}")
    if set(w) != set(wo):
        raise DataError(f"ann_count rows differ between arms: {sorted(set(w) ^ set(wo))}")
    labels = sorted(w, key=_row_order)
    agg_w = {label: aggregate(w[label]) for label in labels}
    agg_wo = {label: aggregate(wo[label]) for label in labels}
    report = highlight(agg_w, "paired", alpha) if len(labels) > 1 else None
    marks = underline(agg_w, agg_wo, alpha)
    title = f"Adaptation to Exp_{u} with and without multi-expert pretraining (paired t-test)"
    return build_table(title, "Samples", agg_w, report, {"w/": agg_w, "w/o": agg_wo}, marks, "w/")


def render(tables: Sequence[Table], fmt: str = "markdown") -> str:
    if fmt == "json":
        return "[\n" + ",\n".join(emit_table(t, "json").rstrip("\n") for t in tables) + "\n]\n"
    sep = "\n" if fmt == "markdown" else ""
    return sep.join(emit_table(t, fmt) for t in tables)
