import pytest
import torch

from expertadapt.errors import ConfigError, DataError, UnknownExpertError
from expertadapt.model import (ModelConfig, build_model, clone_model, partition, partition_manifest, predict_mask,
                               reinit_expert_branch, trainable_parameters)
from expertadapt.training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint


def tiny(experts=(1, 2, 3), **kw):
    return build_model(ModelConfig.desk(experts=experts, **kw), init_seed=0)


def batch(n=2, size=64, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, 1, size, size, generator=g)


# --------------------------------------------------------------- partition


def test_partition_disjoint_and_complete():
    model = tiny()
    part = partition(model)
    ids = {}
    for name, p in part.shared.items():
        ids[id(p)] = "shared"
    for r, pairs in part.per_expert.items():
        for g, b in pairs:
            for p in (g, b):
                assert id(p) not in ids
                ids[id(p)] = r
    assert set(ids) == {id(p) for p in model.parameters()}
    assert len(part.per_expert) == 3
    assert part.shared_size() + sum(part.expert_size(r) for r in (1, 2, 3)) == sum(p.numel() for p in model.parameters())


def test_decoder_only_conditioning_is_smaller():
    full = partition(tiny(condition="all")).expert_size(1)
    dec = partition(tiny(condition="decoder")).expert_size(1)
    assert dec == 2 * sum(ModelConfig.desk().decoder_widths) * 2 < full


def test_build_is_deterministic():
    a, b = tiny(), tiny()
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and torch.equal(pa, pb)
    c = build_model(ModelConfig.desk(experts=(1, 2, 3)), init_seed=1)
    assert not torch.equal(a.stem.weight, c.stem.weight)


@pytest.mark.parametrize("bad", [dict(input_size=(60, 64)), dict(experts=()), dict(base_width=0),
                                 dict(stage_depths=(2, 2, 2)), dict(condition="encoder")])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        ModelConfig.desk(**bad) if "experts" not in bad else ModelConfig.desk(**bad)


# ----------------------------------------------------------------- forward


def test_perturbing_one_branch_changes_only_that_branch():
    model = tiny().eval()
    x = batch()
    with torch.no_grad():
        before = {r: model(x, r) for r in (1, 2)}
        model.stem_norm.gamma["2"][0] += 0.5
        after = {r: model(x, r) for r in (1, 2)}
    assert torch.equal(before[1], after[1])
    assert not torch.equal(before[2], after[2])


def test_shape_and_finiteness():
    model = tiny().eval()
    for x in (torch.zeros(1, 1, 64, 64), batch(3), 1e3 * batch(1)):
        with torch.no_grad():
            out = model(x, 1)
        assert out.shape == x.shape
        assert torch.isfinite(out).all()
    big = build_model(ModelConfig.desk(experts=(1,), input_size=(96, 128)))
    assert big(torch.rand(1, 1, 96, 128), 1).shape == (1, 1, 96, 128)


def test_unknown_expert_rejected():
    with pytest.raises(UnknownExpertError):
        tiny()(batch(1), 9)


def test_predict_mask_saturation(monkeypatch):
    model = tiny(experts=(1,))
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.fill_(10.0)
    assert predict_mask(model, batch(1), 1).all()
    with torch.no_grad():
        model.head.bias.fill_(-10.0)
    assert not predict_mask(model, batch(1), 1).any()
    assert predict_mask(model, batch(1), 1, threshold=0.0).all()


# ------------------------------------------------------------------ reinit


def test_reinit_identity_matches_fresh_branch():
    model = tiny(experts=(1,))
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.01 * torch.randn_like(p))
        for m in model.conditioned_norms():
            m.gamma["1"].fill_(1.0)
            m.beta["1"].zero_()
    reinit_expert_branch(model, 6)
    model.eval()
    x = batch()
    with torch.no_grad():
        assert torch.equal(model(x, 6), model(x, 1))
    assert model.experts == [1, 6] and model.cfg.experts == (1, 6)
    with pytest.raises(ValueError):
        reinit_expert_branch(model, 6)


def test_reinit_average():
    model = tiny(experts=(1, 2))
    with torch.no_grad():
        for m in model.conditioned_norms():
            m.gamma["1"].fill_(0.5)
            m.gamma["2"].fill_(1.5)
            m.beta["1"].fill_(0.2)
            m.beta["2"].fill_(0.2)
    shared_before = {k: v.clone() for k, v in partition(model).shared.items()}
    reinit_expert_branch(model, 7, "average")
    for m in model.conditioned_norms():
        assert torch.equal(m.gamma["7"], torch.ones_like(m.gamma["7"]))
        assert torch.allclose(m.beta["7"], torch.full_like(m.beta["7"], 0.2))
    for k, v in partition(model).shared.items():
        assert torch.equal(v, shared_before[k])


def test_reinit_average_needs_donor():
    model = tiny(experts=(1,))
    with pytest.raises(ValueError):
        reinit_expert_branch(model, 1, "average", replace=True)


def test_trainable_parameter_scopes():
    model = tiny()
    part = partition(model)
    own = trainable_parameters(model, "expert_only", 2)
    assert sum(p.numel() for p in own) == part.expert_size(2)
    everything = trainable_parameters(model, "all", 2)
    assert sum(p.numel() for p in everything) == part.shared_size() + part.expert_size(2)
    with pytest.raises(UnknownExpertError):
        trainable_parameters(model, "all", 9)
    with pytest.raises(ValueError):
        trainable_parameters(model, "some", 2)


# -------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip(tmp_path):
    model = tiny()
    with torch.no_grad():
        model.stem_norm.beta["3"].fill_(0.3)
    ckpt = Checkpoint(model, model.cfg, TrainConfig(crop_size=(64, 64)), 5, [{"step": 0}], {"seed": 1})
    path = save_checkpoint(ckpt, tmp_path / "m.pt")
    back = load_checkpoint(path)
    assert back.model_config == model.cfg and back.step == 5 and back.loss_log == [{"step": 0}]
    for (n, p), (_, q) in zip(model.state_dict().items(), back.model.state_dict().items()):
        assert torch.equal(p, q), n
    assert partition_manifest(back.model) == partition_manifest(model)


def test_checkpoint_manifest_mismatch_rejected(tmp_path):
    model = tiny()
    path = save_checkpoint(Checkpoint(model, model.cfg, TrainConfig()), tmp_path / "m.pt")
    payload = torch.load(path, weights_only=True)
    payload["partition"]["stem.weight"] = "expert:1"
    torch.save(payload, path)
    with pytest.raises(DataError, match="partition"):
        load_checkpoint(path)
    (tmp_path / "junk.pt").write_bytes(b"not a checkpoint")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "junk.pt")


def test_clone_is_independent():
    model = tiny(experts=(1,))
    twin = clone_model(model)
    with torch.no_grad():
        twin.head.bias.fill_(3.0)
    assert not torch.equal(model.head.bias, twin.head.bias)
