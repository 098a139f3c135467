"""Bend a synthetic body, straighten it both ways and write the results.

    python3 demos/straighten_one.py [out_dir]
"""

import os
import sys

import numpy as np

from unbend import io as uio
from unbend.evaluation import registered_iou, width_error
from unbend.morph import unwrap_morph
from unbend.neutral import unwrap_neutral
from unbend.synth import BendProfile, add_boundary_noise, bend, make_template

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
os.makedirs(out, exist_ok=True)

# a tapered body, wider in the middle, bent into an S
L = 260
tpl, straight_mask, _ = make_template(L, lambda s: 24 + 8 * np.sin(np.pi * s / L), ("taper", "round"),
                                      tip_width=5)
body = bend(tpl, BendProfile([(0, [0.012]), (120, [-0.012])]), theta0=0.3)
mask = add_boundary_noise(body.mask, 1.0, seed=1)
uio.write_mask(os.path.join(out, "bent.png"), mask)

# neutral-line method
rn = unwrap_neutral(mask)
secs = [(s.p_I, s.p_II) for s in rn.sections]
uio.write_svg(os.path.join(out, "sections.svg"),
              uio.svg_overlay(mask.shape, rn.contour, secs, [rn.neutral.midpoints], mask))
uio.write_profile(os.path.join(out, "profile_neutral.csv"), rn.shape)

# morphological method
rm = unwrap_morph(mask)
uio.write_png(os.path.join(out, "straight_morph.png"), rm.unwrapped.mask)
uio.write_png(os.path.join(out, "phi_min.png"), uio.to_uint8(np.clip(rm.phi_min, 0, 1)))

w_true = tpl.width(np.arange(0.0, L + 1e-9))
wn = 2 * rn.shape.resample(1.0)[1]
wm = rm.unwrapped.width_profile()
wm = wm[wm > 0]
print(f"true length            {L:.1f}")
print(f"neutral-line length    {rn.shape.length:.1f}")
print(f"reference curve length {rm.reference.length:.1f}")
print(f"width error, neutral   {100 * width_error(wn, w_true):.2f}%")
print(f"width error, morph     {100 * width_error(wm, w_true):.2f}%")
print(f"IoU with the template  {registered_iou(rm.unwrapped.mask, straight_mask):.3f}")
print(f"flags                  {rn.flags + rm.flags}")
print(f"files written to {out}/")
