# Anatomy of the per-pixel blend
#
# The final image is never an average of the two columns with a global
# knob. A small conv net looks at both column outputs plus their auxiliary
# features and emits a softmax pair (W_G, W_P) per pixel. Two structural
# guarantees hold by construction, trained or not: the maps sum to one
# everywhere, and the blend lands between the column values at every pixel.
# This script denoises a shot, verifies both guarantees numerically, and
# writes the weight maps as images so you can see which column owns which
# region.

import pathlib
import sys
import tempfile

import numpy as np

from pixelens import model, synth
from pixelens.ensemble import weights_to_png

out = pathlib.Path(tempfile.mkdtemp(prefix="pixelens_demo03_"))
shot = synth.gen_shot(synth.SynthConfig(resolution=64, spp=4, seed=11))

# A checkpoint from demo 02 (pass its path) makes the maps interesting;
# without one a fresh model still satisfies every structural claim.
if len(sys.argv) > 1:
    state = model.load_state(sys.argv[1])
    print(f"loaded checkpoint {sys.argv[1]} (provenance '{state.provenance}')")
else:
    state = model.build_model(model.ModelConfig(
        width_scale=0.06, depth=3, recon_kernel=5, conv_kernel=3,
        ens_layers=2, ens_base_width=8, manifold_dims=(36, 16, 12)), seed=4)
    print("no checkpoint given, using a fresh model (maps will hover near 0.5)")

res = model.denoise_shot(state, shot)

print("\nper-branch weight maps:")
for branch in ("diffuse", "specular"):
    wg, wp = res.wg[branch], res.wp[branch]
    print(f"  {branch:8s} max |wg+wp-1| = {np.abs(wg + wp - 1).max():.2e}   "
          f"wg in [{wg.min():.3f}, {wg.max():.3f}]   mean {wg.mean():.3f}")

# Convexity: in each branch the blended pixel sits inside the interval
# spanned by the two column predictions (checked in the domain the blend
# happens in, before the branches are recombined).
worst = 0.0
for branch in ("diffuse", "specular"):
    e = res.branch_pre[branch]
    g = res.branch_pre_g[branch]
    p = res.branch_pre_p[branch]
    worst = max(worst,
                float(np.maximum(e - np.maximum(g, p), 0).max()),
                float(np.maximum(np.minimum(g, p) - e, 0).max()))
print(f"\nworst per-pixel hull violation across branches: {worst:.2e}")

for branch in ("diffuse", "specular"):
    weights_to_png(res.wg[branch], out / f"wg_{branch}.png")
    weights_to_png(res.wp[branch], out / f"wp_{branch}.png")
print(f"weight-map images in {out} (white = that column wins the pixel)")
