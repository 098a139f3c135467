"""Unwrap one body under several bends and report how much the straightened
shapes disagree (length, area, width, perimeter, maximum cross section).

    python3 demos/consistency.py
"""

import numpy as np

from unbend.classify import METRICS, consistency_metrics
from unbend.neutral import unwrap_neutral
from unbend.synth import BendProfile, add_boundary_noise, bend, make_template

L = 240
tpl, _, _ = make_template(L, lambda s: 28 + 6 * np.sin(2 * np.pi * s / L) ** 2, ("round", "taper"),
                          tip_width=5)
bends = [0.004, -0.008, [(0, [-0.01, 0.00008])], [(0, [0.012]), (120, [-0.012])],
         [(0, [0.0, 0.0, 3e-7])], 0.0]

shapes = []
for k, spec in enumerate(bends):
    body = bend(tpl, BendProfile(spec), theta0=0.5 * k)
    shapes.append(unwrap_neutral(add_boundary_noise(body.mask, 1.0, seed=k)).shape)

rep = consistency_metrics(shapes)
print("instance " + "".join(f"{m:>9}" for m in METRICS))
for i in range(len(shapes)):
    print(f"{i:>8} " + "".join(f"{rep.a[m][i]:>8.2f}%" for m in METRICS))
print("mean |a| " + "".join(f"{rep.mean_abs(m):>8.2f}%" for m in METRICS))
print("std      " + "".join(f"{rep.std(m):>8.2f}%" for m in METRICS))
