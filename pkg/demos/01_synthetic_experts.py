"""
Synthetic experts: one image, seven opinions
============================================

Builds the reference synthetic dataset and measures how much the simulated
annotators agree with each other. Experts 1-5 play the role of the
annotators available for pretraining, 6 is a new expert whose style lies
among them and 7 is an outlier.
"""
from itertools import combinations

import numpy as np

from expertadapt import SynthConfig, default_reference_styles, dice_score, generate_dataset

# the styles: a radial bias (dilation > 0, erosion < 0) plus boundary wobble
for s in default_reference_styles():
    print(f"expert {s.expert_id}: bias {s.bias_radius:+d} px, wobble {s.wobble_amplitude:.1f} px")

# 39 cases: 34 for training, 5 held out for testing
ds = generate_dataset(SynthConfig(n_cases=39, n_test=5))
print(f"\n{ds.n_cases} cases, experts {sorted(ds.roster)}, image {ds.case(1).shape}")

# mean pairwise Dice between experts over the training split
train = ds.split("train")
experts = sorted(ds.roster)
agree = np.eye(len(experts))
for a, b in combinations(experts, 2):
    d = np.mean([dice_score(c.masks[a], c.masks[b]) for c in train])
    agree[a - 1, b - 1] = agree[b - 1, a - 1] = d

print("\nmean pairwise Dice (%)")
print("     " + "".join(f"{r:>7d}" for r in experts))
for i, r in enumerate(experts):
    print(f"{r:>4d} " + "".join(f"{100 * v:7.1f}" for v in agree[i]))

# the outlier agrees least with everyone else
others = [np.mean([agree[r - 1, q - 1] for q in experts if q != r]) for r in experts]
print("\nmean agreement with the other experts:", ", ".join(f"{r}: {100 * v:.1f}" for r, v in zip(experts, others)))

# a quick look at one case: foreground area per expert
case = train.case(1)
print("\ncase 1 foreground pixels:", {r: int(case.masks[r].sum()) for r in experts})
