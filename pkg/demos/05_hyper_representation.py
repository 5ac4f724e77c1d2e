"""Learn a shared linear feature map across few-shot tasks.

Eight 5-way 1-shot episodes share one d x r representation (the outer
variable); each episode trains its own small softmax head on mapped features
(the inner variable, one disjoint block per task).  The outer loop descends
the episodes' validation loss through the unrolled head training.  Blending
validation gradients into the head updates lifts validation accuracy far
above the basic driver at the same budget.
"""

import numpy as np

from bilevelopt import (SolveConfig, gen_synthetic, hyperrep_accuracy_metric,
                        make_episodes, make_hyperrep, run_model)
from bilevelopt.data import stream

SEED = 0
d, C, way, shot, vpc, r = 20, 20, 5, 1, 10, 8
ds = gen_synthetic(SEED, 1200, d, C, margin=3.0)
episodes = make_episodes(ds, way, shot, vpc, n_tasks=8, seed=SEED)
problem = make_hyperrep(episodes, rep_dim=r)
metric = hyperrep_accuracy_metric(episodes, rep_dim=r)
lam0 = stream(SEED, "lambda0").normal(0.0, 1.0 / np.sqrt(d), problem.outer_dim)

print(f"8 episodes, {way}-way {shot}-shot, {vpc} validation samples per class")
print(f"representation {d} -> {r}, heads {r} x {way} per task\n")

traces = {}
for mode in ("improved", "basic"):
    cfg = SolveConfig(t=0.01, s=0.01, eta=0.003, K=30, T=60, mode=mode)
    traces[mode] = run_model(problem, lam0, cfg, metric=metric)

print("episode validation accuracy along the outer loop:")
print("  iter   improved   basic")
for it in (0, 9, 19, 39, 59):
    ri = traces["improved"].records[it]
    rb = traces["basic"].records[it]
    print(f"  {it:4d}   {ri.metric:.4f}     {rb.metric:.4f}")

print(f"\nfinal accuracy: improved {traces['improved'].final_metric:.4f}  "
      f"basic {traces['basic'].final_metric:.4f}  (chance = {1 / way:.2f})")
