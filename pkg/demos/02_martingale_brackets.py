"""Martingale structure: bracket growth and pairwise decorrelation.

The centered phase at half-width lam is a martingale whose quadratic
variation grows like 2t up to the horizon T_lam.  Two half-widths share
noise, so their cross bracket tracks 2t as well until their oscillation
frequencies separate, after which it flattens; the gap controls when.
"""
import math

import numpy as np

from sinebeta.model import ModelParams, t_lambda
from sinebeta.sde import StepPolicy, derive_stream, integrate_ensemble
from sinebeta.stats import cross_bracket_from_run, martingale_trace

beta = 2.0
lam = 21
grid = (21, 24, 42)
params = ModelParams(beta=beta, x_max=42, lambda_grid=grid)
policy = StepPolicy(t_end=t_lambda(42, beta), relax_extra=0.0, out_stride=32)

n = 300
horizon = t_lambda(lam, beta)
own = np.empty(n)
cross_near = np.empty(n)
cross_far = np.empty(n)
for r in range(n):
    ens = integrate_ensemble(params, policy, derive_stream(21, r))
    own[r] = martingale_trace(ens, lam, mark_times=(horizon,)).marks[0].bracket
    cross_near[r] = cross_bracket_from_run(ens, 21, 24, mark_times=(horizon,)).marks[0].m
    cross_far[r] = cross_bracket_from_run(ens, 21, 42, mark_times=(horizon,)).marks[0].m

print(f"at t = T_21 = {horizon:.2f} (beta = 2, {n} replicas):")
print(f"  own bracket      mean {own.mean():7.3f}   target 2t = {2 * horizon:.3f}")
print(f"  cross, gap  3    mean {cross_near.mean():7.3f}")
print(f"  cross, gap 21    mean {cross_far.mean():7.3f}")
print("the larger the gap, the earlier the phases decouple and the")
print("smaller the shared bracket; the rough prediction subtracts")
print(f"(4/beta) log gap: {2 * (horizon - 2 * math.log(3)):.3f} and "
      f"{2 * (horizon - 2 * math.log(21)):.3f}")
