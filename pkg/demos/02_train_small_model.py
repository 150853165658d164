# Staged training, end to end, at desk scale
#
# The model is two kernel-predicting denoiser columns plus a per-pixel
# blender. Training happens in stages: each column pretrains alone, a short
# low-rate finetune polishes both through the recombined image, and a joint
# stage trains the blender while the columns creep along at a much smaller
# rate. This script runs the whole ladder on a tiny synthetic dataset with a
# narrow model, so it finishes in well under a minute while exercising every
# stage for real.

import pathlib
import tempfile

import numpy as np

from pixelens import metrics, model, synth, training
from pixelens.shots import tone_map

out = pathlib.Path(tempfile.mkdtemp(prefix="pixelens_demo02_"))

# Four training scenes and one held-out scene, all with references.
train = [synth.gen_shot(synth.SynthConfig(resolution=32, spp=4, seed=i))
         for i in range(4)]
val = [synth.gen_shot(synth.SynthConfig(resolution=32, spp=4, seed=99))]

# A deliberately small architecture: same structure, fraction of the width.
cfg = model.ModelConfig(width_scale=0.06, depth=3, recon_kernel=5,
                        conv_kernel=3, ens_layers=2, ens_base_width=8,
                        manifold_dims=(36, 16, 12))
state = model.build_model(cfg, seed=0)
print(f"model: {state.param_count()} parameters, provenance '{state.provenance}'")


def stage(mode, epochs):
    # rates scaled up from the full-size recipe; a desk run takes a few
    # hundred optimizer steps, not a few hundred thousand
    return training.TrainConfig(mode=mode, lr_denoiser=3e-3, lr_ensembler=1e-3,
                                lr_finetune=1e-4, patch_size=16,
                                patches_per_shot=8, batch_size=4,
                                max_epochs=epochs, patience=50, seed=0)


for mode, epochs in (("pretrain_G", 6), ("pretrain_P", 6),
                     ("finetune", 2), ("joint", 6)):
    result = training.pretrain(state, train, val, stage(mode, epochs)) \
        if mode in ("pretrain_G", "pretrain_P", "finetune") \
        else training.joint_train(state, train, val, stage(mode, epochs))
    print(f"{mode:11s} {epochs} epochs  val relmse {result.best_val:.5f} "
          f"(best at epoch {result.best_epoch})  -> provenance '{state.provenance}'")

# How much did all that help on the held-out scene?
shot = val[0]
res = model.denoise_shot(state, shot)
ref = tone_map(shot.reference_total())
noisy = tone_map(shot.noisy_diffuse + shot.noisy_specular)
print("\nheld-out scene, relative mean squared error (tone mapped):")
print(f"  noisy input      {metrics.relmse(noisy, ref):.5f}")
print(f"  column G alone   {metrics.relmse(tone_map(res.column_g), ref):.5f}")
print(f"  column P alone   {metrics.relmse(tone_map(res.column_p), ref):.5f}")
print(f"  blended output   {metrics.relmse(tone_map(res.final), ref):.5f}")

# The trained state round-trips through the checkpoint container.
model.save_state(out / "ckpt", state)
back = model.load_state(out / "ckpt")
assert back.provenance == "joint"
same = all(np.array_equal(a.data, b.data) for (_, a), (_, b)
           in zip(state.named_parameters(), back.named_parameters()))
print(f"\ncheckpoint round trip bitwise: {same}  ({out / 'ckpt'})")
