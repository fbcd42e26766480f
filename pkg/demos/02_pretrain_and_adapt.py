"""
Pretrain on three experts, adapt to a fourth
============================================

Trains a desk-size CIN U-Net on experts 1-3, then adapts it to expert 6
from five annotated images, and compares with a network trained on the
same five images from scratch. Each expert owns only the affine
parameters of the normalisation layers; everything else is shared.

Takes a few minutes on one CPU core.
"""
import time

from expertadapt import ModelConfig, SynthConfig, TrainConfig, build_model, finetune, generate_dataset, partition, train
from expertadapt.data import restrict, sample_indices
from expertadapt.training import evaluate_model, train_from_scratch

ds = generate_dataset(SynthConfig(n_cases=50, n_test=16))
train_split, test = ds.split("train"), ds.split("test")
cfg = TrainConfig(batch_size=4, train_steps=600, finetune_steps=200, crop_size=(64, 64), seed=0)

# the model has one set of normalisation affines per expert
model = build_model(ModelConfig.desk(experts=(1, 2, 3)), init_seed=0)
part = partition(model)
print(f"shared parameters {part.shared_size()}, per expert {part.expert_size(1)}")

# stage 1: multi-expert training on all 34 training cases
start = time.perf_counter()
pre = train(model, restrict(train_split, (1, 2, 3), train_split.case_indices), (1, 2, 3), cfg)
print(f"pretraining took {time.perf_counter() - start:.0f}s, "
      f"loss {pre.loss_log[0]['loss_norm']:.3f} -> {pre.loss_log[-1]['loss_norm']:.3f}")

# score each branch against each expert; after 600 steps the branches lean towards their own expert
for branch in (1, 2, 3):
    row = [evaluate_model(pre, test, branch, ref).mean.dice for ref in (1, 2, 3, 6)]
    print(f"branch {branch}: Dice vs experts 1,2,3,6 =", " ".join(f"{100 * v:.1f}" for v in row))

# stage 2: five samples from the new expert (first sampling way, cases 1-5)
picks = sample_indices(1, 5, train_split.n_cases)
few = restrict(train_split, (6,), [train_split.case_indices[i - 1] for i in picks])
pairs = [(c.image, c.masks[6]) for c in few]

adapted = finetune(pre, pairs, 6, cfg)
scratch = train_from_scratch(few, (6,), ModelConfig.desk(), cfg)

w = evaluate_model(adapted, test, 6, 6).mean
wo = evaluate_model(scratch, test, 6, 6).mean
print(f"\nnew expert 6 from 5 samples: with pretraining Dice {100 * w.dice:.1f} (ASSD {w.assd:.2f}), "
      f"from scratch Dice {100 * wo.dice:.1f} (ASSD {wo.assd:.2f})")
