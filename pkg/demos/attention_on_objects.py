"""Where does semantic attention look?

The generator plants each object by adding its class prototype to a few
patches. Regenerating the same data with zero noise draws the same random
numbers, so the clean copy shows exactly which patch holds which object.

Nothing in the objective ties attention column c to class c: the refined
head only sees the mixture of class semantics, and any mixing that scores
well is as good as any other. So this script asks two questions. How often
does a patch's attention argmax equal its planted class? And, allowing any
one-to-one relabelling of the attention columns (Hungarian matching), how
well does the argmax separate the objects? Typical output: direct agreement
near or below chance, matched agreement well above it, with only a handful
of columns in use.

    python3 demos/attention_on_objects.py           # reduced size, seconds
    python3 demos/attention_on_objects.py --full    # default preset, ~1 min
"""

import sys

import numpy as np
from scipy.optimize import linear_sum_assignment

from clsl.config import RunConfig
from clsl.data import class_prototypes, generate
from clsl.trainer import run_experiment

if "--full" in sys.argv:
    cfg = RunConfig(p=0.5, seed=2, data_seed=2)
else:
    cfg = RunConfig(num_images=900, n_test=300, d_v=32, d_t=16, d_1=64, d_2=32, epochs=20, p=0.5, seed=2, data_seed=2)
C = cfg.num_classes

report = run_experiment(cfg, generate(cfg.synthetic_spec()))
test = report.test

protos = class_prototypes(C, cfg.d_raw, np.random.default_rng(cfg.data_seed))
clean = generate(cfg.replace(noise_sigma=0.0).synthetic_spec()).patches[-cfg.n_test :]
planted = (clean @ protos.T).argmax(axis=-1)
carries_object = np.linalg.norm(clean, axis=-1) > 0

with report.model.swapped(report.eval_state()):
    weights = report.model.forward(test.patches).attention_weights.value
looks_at = weights.argmax(axis=-1)

confusion = np.zeros((C, C), dtype=int)
np.add.at(confusion, (planted[carries_object], looks_at[carries_object]), 1)
rows, cols = linear_sum_assignment(-confusion)
n_obj = confusion.sum()

print(f"test mAP {report.map:.3f}")
print(f"object patches whose attention argmax is the planted class: {np.trace(confusion) / n_obj:.1%} (chance {1 / C:.0%})")
print(f"same, under the best one-to-one relabelling of columns:   {confusion[rows, cols].sum() / n_obj:.1%}")
used = np.bincount(looks_at.ravel(), minlength=C)
print(f"columns that win at least 2% of patches: {int(np.sum(used >= 0.02 * looks_at.size))} of {C}")
print("\nplanted class (rows) vs attention argmax (columns), object patches only:")
print(confusion)
