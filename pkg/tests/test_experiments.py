import json
from math import comb

import pytest

from expertadapt import experiments as exps
from expertadapt.errors import ConfigError, DataError
from expertadapt.experiments import (Runner, canonical_config, load_config, render, run_experiment, serialize_spec,
                                     spec_from_dict, tables_from_ledger)

TINY = {
    "new_experts": [6],
    "annotation_experts": [1, 2, 3],
    "matrix_experts": [1, 2, 3, 4, 5, 6, 7],
    "pretrain_experts": 2,
    "ann_counts": [2, 4],
    "expert_counts": [0, 1, 3],
    "finetune_count": 3,
    "n_ways": 2,
    "n_seeds": 2,
    "train": {"train_steps": 3, "finetune_steps": 2, "batch_size": 2},
    "synth": {"n_cases": 10, "n_test": 3},
}


def tiny_spec(tmp_path, kind, **extra):
    return spec_from_dict({**TINY, "kind": kind, "output_dir": str(tmp_path / "results"), **extra})


# ------------------------------------------------------------------ config


def test_minimal_config_fills_profile_defaults(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"kind": "expert_count"}))
    spec = load_config(path)
    assert spec.profile == "desk"
    assert spec.train.batch_size == 4 and spec.train.train_steps == 600 and spec.train.finetune_steps == 200
    assert spec.model.input_size == (64, 64) and spec.model.base_width == 8
    assert spec.ann_counts == (5, 34) and spec.new_experts == (6, 7)
    assert spec.synth.n_cases - spec.synth.n_test == 34
    paper = load_config(path, profile="paper")
    assert paper.train.batch_size == 16 and paper.train.train_steps == 5000 and paper.train.finetune_steps == 1000
    assert paper.model.input_size == (192, 192) and paper.ann_counts == (5, 10, 15, 20, 25, 30, 34)
    assert paper.train.lr0 == 0.001 and paper.train.optimizer == "radam"


def test_count_above_training_set_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"ann_counts": [50]}))
    with pytest.raises(ConfigError, match="ann_counts"):
        load_config(path)


@pytest.mark.parametrize("raw,key", [({"bogus": 1}, "bogus"), ({"train": {"stepz": 1}}, "train.stepz"),
                                     ({"kind": "everything"}, "kind"), ({"train": {"optimizer": "sgd"}}, "optimizer")])
def test_schema_errors_name_the_key(tmp_path, raw, key):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(raw))
    with pytest.raises(ConfigError, match=key):
        load_config(path)


def test_missing_or_broken_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_round_trip_is_canonical(tmp_path):
    raw = {"kind": "ann_count", "ann_counts": [5, 10], "train": {"seed": 4}}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(raw))
    text = serialize_spec(load_config(path))
    assert json.loads(text) == canonical_config(raw)
    again = tmp_path / "again.json"
    again.write_text(text)
    assert serialize_spec(load_config(again)) == text


# -------------------------------------------------------------- grids


def test_ann_count_grid_and_resume(tmp_path, monkeypatch):
    spec = tiny_spec(tmp_path, "ann_count")
    tables = run_experiment(spec)
    files = list((tmp_path / "results" / "ann_count").glob("*.json"))
    n_combos = comb(3, 2)
    assert len(files) == len(spec.ann_counts) * n_combos * spec.n_ways * 2
    first = render(tables)
    assert "w/o" in first and "n=2" in first and "n=4" in first

    # resuming must not train anything and must give identical bytes
    def boom(*a, **k):
        raise AssertionError("resume retrained a completed cell")

    monkeypatch.setattr(exps, "train", boom)
    monkeypatch.setattr(exps, "finetune", boom)
    for fmt in ("markdown", "csv", "json"):
        assert render(run_experiment(spec), fmt) == render(tables, fmt)


def test_pretrained_models_are_shared_across_counts_and_ways(tmp_path, monkeypatch):
    spec = tiny_spec(tmp_path, "ann_count")
    calls = []
    real = exps.train

    def counting(model, ds, combo, cfg, augment=None, callback=None):
        calls.append(tuple(combo))
        return real(model, ds, combo, cfg, augment, callback)

    monkeypatch.setattr(exps, "train", counting)
    Runner(spec).run()
    pretrains = [c for c in calls if len(c) == 2]
    scratch = [c for c in calls if c == (6,)]
    assert len(pretrains) == comb(3, 2)
    assert len(scratch) == len(spec.ann_counts) * spec.n_ways


def test_expert_count_grid(tmp_path):
    spec = tiny_spec(tmp_path, "expert_count")
    tables = run_experiment(spec)
    files = list((tmp_path / "results" / "expert_count").glob("*.json"))
    assert len(files) == spec.n_ways * (1 + comb(3, 1) + comb(3, 3))
    assert tables[0].rows == ["k=0", "k=1", "k=3"]


def test_expert_matrix_shape(tmp_path):
    spec = tiny_spec(tmp_path, "expert_matrix", new_experts=[6, 7], matrix_experts=[1, 2, 3, 4, 5, 6, 7],
                     annotation_experts=[1, 2, 3])
    tables = run_experiment(spec)
    assert len(tables) == 2
    for table in tables:
        assert table.rows == [f"Exp_{r}" for r in range(1, 8)]
        assert len(table.columns) == 3


def test_incomplete_grid_is_an_error(tmp_path):
    spec = tiny_spec(tmp_path, "expert_count")
    run_experiment(spec)
    victim = sorted((tmp_path / "results" / "expert_count").glob("*k=1*.json"))[0]
    victim.unlink()
    with pytest.raises(DataError, match="incomplete grid"):
        tables_from_ledger(spec.output_dir, "expert_count", spec)


def test_changed_config_invalidates_cells(tmp_path):
    spec = tiny_spec(tmp_path, "expert_count", expert_counts=[1])
    run_experiment(spec)
    ledger = exps.Ledger(spec.output_dir, "expert_count")
    run = ledger.runs()[0]
    changed = spec_from_dict({**TINY, "kind": "expert_count", "expert_counts": [1], "output_dir": spec.output_dir,
                              "train": {**TINY["train"], "finetune_steps": 3}})
    key_old = run.provenance["config_hash"]
    Runner(changed).run()
    assert exps.Ledger(spec.output_dir, "expert_count").runs()[0].provenance["config_hash"] != key_old


def test_entries_reproducible_from_recorded_seeds(tmp_path):
    spec = tiny_spec(tmp_path, "expert_count", expert_counts=[0])
    run_experiment(spec)
    other = tiny_spec(tmp_path / "again", "expert_count", expert_counts=[0])
    run_experiment(other)
    a = {r.run_id: r for r in exps.Ledger(spec.output_dir, "expert_count").runs()}
    b = {r.run_id: r for r in exps.Ledger(other.output_dir, "expert_count").runs()}
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].metrics == b[k].metrics
        assert a[k].provenance["seed"] == b[k].provenance["seed"]


def test_missing_expert_masks(tmp_path):
    spec = tiny_spec(tmp_path, "expert_count", new_experts=[8])
    with pytest.raises(DataError, match="8"):
        Runner(spec).run()


def test_empty_ledger(tmp_path):
    with pytest.raises(DataError):
        tables_from_ledger(tmp_path, "ann_count")
