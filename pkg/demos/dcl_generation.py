"""One DCL generation on I1 starting from the (15, 9) heuristic, at the
reduced budget of 10^4 labelled states with r_max 1000 (about five minutes on
one core).  Much smaller datasets tend to give a policy worse than the
heuristic."""

import logging

from shockmaint import instances
from shockmaint.dcl import DCLSettings, train_dcl
from shockmaint.evaluator import compare
from shockmaint.heuristics import ThresholdPolicy

logging.basicConfig(level=logging.INFO, format="%(message)s")
cfg = instances.I1()
base = ThresholdPolicy.uniform(2, 15, 9)
gen = train_dcl(cfg, base, "L1", settings=DCLSettings(generations=1, max_samples=10_000, r_max=1000), seed=3)[0]
print("dataset:", gen.dataset)
print(f"training: {gen.training.epochs} epochs, validation accuracy {gen.training.val_accuracy:.3f}")
d = compare(gen.policy, base, cfg, "L1", reps=5000, horizon=1000, seed=4)
print(f"J(gen1) - J(pi_N) = {d.diff:.4f} +- {d.ci_halfwidth:.4f}")
