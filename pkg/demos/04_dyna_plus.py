"""Background planning with a corrupted model, with and without a feasibility check.

Dyna replays simulated transitions; here a fraction of them jump to a
random state. Dyna+ asks a learned one-step feasibility estimate whether the
jump is plausible before using it.

Run: python3 demos/04_dyna_plus.py
"""
import numpy as np

from tapgrid.experiments import dyna_error

for rate in (0.0, 0.1):
    for plus in (False, True):
        logs = [dyna_error(seed, plus, rate, steps=20_000) for seed in range(3)]
        err = [log.final["max_q_error"] for log in logs]
        name = "Dyna+" if plus else "Dyna "
        extra = ""
        if plus:
            rej = np.mean([log.final["rejected"] / max(1, log.final["simulated"]) for log in logs])
            extra = f", rejected {rej:.1%} of simulated updates"
        print(f"injection {rate:.0%} {name}: max |Q - q*| = {np.mean(err):.3f}{extra}")
