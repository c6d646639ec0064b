"""Desk-scale comparison: Gated NetVLAD vs NetVLAD vs average pooling, three seeds.

Trains nine models on the default 20,000-video synthetic dataset (about five
minutes on one CPU), prints the validation-GAP table and builds one greedy
ensemble from each seed's three models.

Run: python3 demos/compare_variants.py
"""

from gatedpool.config import desk_profile
from gatedpool.experiments import compare


def show(run):
    print(f"  {run.variant:<14} seed {run.seed}  GAP {run.gap:.4f}  ({run.seconds:.0f}s)",
          flush=True)


comp = compare(desk_profile(), seeds=(0, 1, 2), progress=show)
print()
print(comp.table())
for seed in comp.seeds():
    spec = comp.ensemble(seed, budget=3)
    steps = " -> ".join(f"{name} {gap:.4f}" for name, gap in spec.selection_log)
    print(f"seed {seed} ensemble: {steps}")
