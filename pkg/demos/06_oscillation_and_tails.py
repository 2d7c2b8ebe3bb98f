"""Two tail phenomena: oscillatory averaging and post-horizon residuals.

The running integral of the doubled phase's sine averages out faster for
larger half-widths (the phase spins faster), halving per doubling of lam.
And once a phase passes its horizon, whatever martingale increment is
still to come has a uniformly exponential tail.
"""
import math

import numpy as np

from sinebeta.model import ModelParams, t_lambda
from sinebeta.sde import StepPolicy, derive_stream, integrate_ensemble
from sinebeta.stats import exceedance_curve, oscillatory_sup, tail_residual
from sinebeta.tilt import run_tilted

beta = 2.0
horizon = 4.0
print("oscillatory averaging, sup over [0, 4] of the sine integral:")
prev = None
for i, lam in enumerate((32, 64, 128)):
    batch = run_tilted(float(lam), 0.0, beta, t_end=horizon, replicas=120,
                       seed=60, stream_offset=i * 120, out_stride=1)
    sups = [oscillatory_sup(batch.path(r), 1.0, horizon) for r in range(120)]
    mean = float(np.mean(sups))
    note = f"   ratio to previous {mean / prev:.3f}" if prev else ""
    print(f"  lam = {lam:4d}: mean sup {mean:.4f}{note}")
    prev = mean

print()
print("post-horizon residual exceedance (400 replicas each):")
thresholds = (0.5, 1.0, 2.0, 3.0)
for lam in (16, 64):
    t_lam = t_lambda(lam, beta)
    params = ModelParams(beta=beta, x_max=lam, lambda_grid=(lam,))
    pol = StepPolicy(t_end=t_lam + 10.0, relax_extra=0.0, out_stride=32)
    res = np.array([
        tail_residual(integrate_ensemble(params, pol, derive_stream(61, lam * 1000 + r)), lam)
        for r in range(400)
    ])
    freqs = exceedance_curve(res, thresholds)
    cells = "  ".join(f"P(>{c:g}) = {f:.3f}" for c, f in zip(thresholds, freqs))
    print(f"  lam = {lam:3d}: {cells}")
print("roughly geometric in the threshold, at every half-width alike")
