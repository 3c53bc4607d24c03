"""Train on mostly hidden labels, then look at what the model fills in.

A small synthetic set keeps this under a minute. With 20% of the labels
known, compare the full model against the plain max-pool baseline, then
print a few training images with their hidden classes and the recovered
probabilities next to the truth.

    python3 demos/recover_hidden_labels.py
"""

import numpy as np

from clsl.config import RunConfig, ablation_configs
from clsl.recovery import fill_pseudo
from clsl.trainer import infer, run_experiment

cfg = RunConfig(num_images=900, n_test=300, d_v=32, d_t=16, d_1=64, d_2=32, epochs=20, p=0.2, seed=1, data_seed=1)
rows = dict(ablation_configs(cfg))

full = run_experiment(rows["+CL"])
base = run_experiment(rows["Baseline"])
print(f"test mAP  full model {full.map:.3f}   max-pool baseline {base.map:.3f}")
print(f"hidden training labels: {full.recovery.n_unknown}, recovery AUC {full.recovery.auc:.3f}")

train = full.train
prob = infer(full.model, train.patches, full.eval_state())
pseudo = fill_pseudo(train.observed, prob)

print("\nimage       class  truth  recovered")
shown = 0
for i in range(len(train)):
    hidden = np.flatnonzero(train.observed[i] == -1)
    # an image with a hidden positive is the interesting case
    if not np.any(train.full[i, hidden] == 1):
        continue
    for c in hidden[:4]:
        print(f"{train.ids[i]}  {c:>5}  {train.full[i, c]:>5}  {pseudo[i, c]:9.3f}")
    print()
    shown += 1
    if shown == 3:
        break
