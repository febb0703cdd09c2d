"""Why hallucinated targets need to be in the training data.

An evaluator trained only on episode relabeling never sees a target it
cannot reach, so it has no reason to call one infeasible. Mixing in
generated targets fixes that, and a planner that consults such an evaluator
picks far fewer delusional checkpoints.

Run: python3 demos/03_feasibility_gate.py   (a few minutes on one core)
"""
import numpy as np

from tapgrid.experiments import delusion_run, feasibility_experiment

print("evaluator errors (mean |E[D] - truth| in bins, never = 16):")
for relabel in ("e", "epg"):
    rep = feasibility_experiment(0, relabel, n_batches=2000)
    print(f"  {relabel:>3}: reachable {rep.e0:.2f}  hallucinated {rep.e1:.2f}  unreachable {rep.e2:.2f}")

print("share of checkpoint selections that were delusional:")
for gated in (False, True):
    freqs = [delusion_run(seed, gated) for seed in range(3)]
    label = "gated" if gated else "ungated"
    print(f"  {label:>8}: {np.mean(freqs):.3f}  per seed {np.round(freqs, 3).tolist()}")
