"""
Metrics, t-tests and highlighted tables
=======================================

Scores a few masks with Dice, ASSD and the 95th-percentile Hausdorff
distance, then builds a small results table in which bold marks the best
row and every row not significantly different from it.
"""
import numpy as np
from scipy import ndimage

from expertadapt import aggregate, evaluate_case, highlight, t_test
from expertadapt.stats import RunResult, build_table, emit_table

# a disc and two distorted copies
yy, xx = np.mgrid[:64, :64]
ref = ((yy - 32) ** 2 + (xx - 32) ** 2 < 15 ** 2).astype(np.uint8)
grown = ndimage.binary_dilation(ref, iterations=2).astype(np.uint8)
shifted = np.roll(ref, 3, axis=1)
for name, pred in (("identical", ref), ("dilated by 2", grown), ("shifted by 3", shifted)):
    m = evaluate_case(pred, ref)
    print(f"{name:>13}: Dice {100 * m.dice:5.1f}  ASSD {m.assd:4.2f}  95HD {m.hd95:4.2f}")

# anisotropic pixels stretch distances along one axis only
print("shifted, 0.5 x 2.0 mm pixels:", evaluate_case(shifted, ref, spacing=(0.5, 2.0)))

# ten sampling ways, three methods; B is A plus a small consistent gain
rng = np.random.default_rng(0)
base = rng.normal(0.85, 0.03, 10)
scores = {"A": base, "B": base + 0.01 + rng.normal(0, 0.004, 10), "C": base - 0.05}
print("\npaired A vs B:", t_test(scores["A"], scores["B"], "paired"))
print("unpaired A vs B:", t_test(scores["A"], scores["B"], "unpaired"))

# pairing removes the shared way-to-way variation, so only the paired test sees the gain
runs = {name: [RunResult("demo", name, (1,), w + 1, 6, {"dice": float(v), "assd": 1 - float(v), "hd95": 2 - float(v)})
               for w, v in enumerate(vals)] for name, vals in scores.items()}
agg = {name: aggregate(r) for name, r in runs.items()}
report = highlight(agg, "paired")
print()
print(emit_table(build_table("Three methods over ten sampling ways (paired t-test)", "Method", agg, report), "markdown"))
print("dice p-values vs best:", {k: round(p, 4) for k, p in report.metrics["dice"].p_values.items()})
