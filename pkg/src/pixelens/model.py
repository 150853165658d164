"""Model state: per-branch networks, checkpoint I/O, full forward passes.

Each of the two radiance branches (diffuse, specular) owns a complete set
of networks: a G column, a P column, the descriptor manifold feeding that
P column, and the branch's weight-map ensembler. Checkpoints store every
parameter with its optimizer slots under hierarchical names.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pixelens import autodiff as ad
from pixelens import columns as cols
from pixelens import ensemble as ens
from pixelens import shots
from pixelens.autodiff import Tensor
from pixelens.shots import LoadError

BRANCHES = ("diffuse", "specular")
CHECKPOINT_KIND = "pixelens-checkpoint v1"


@dataclass(frozen=True)
class ModelConfig:
    width_scale: float = 1.0
    depth: int = 9
    base_width: int = 100
    recon_kernel: int = 21
    ens_layers: int = 8
    ens_base_width: int = 50
    conv_kernel: int = 5
    manifold_dims: tuple = (shots.DESCRIPTOR_CHANNELS, 64, 32, 12)
    dtype: str = "float32"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    def np_dtype(self):
        return np.dtype(self.dtype)

    def denoiser_config(self, column):
        embed = self.manifold_dims[-1]
        in_ch = 3 + (shots.GBUFFER_CHANNELS if column == "G" else embed)
        return cols.DenoiserConfig(
            input_channels=in_ch, depth=self.depth, base_width=self.base_width,
            width_scale=self.width_scale, recon_kernel=self.recon_kernel,
            conv_kernel=self.conv_kernel)

    def manifold_config(self):
        return cols.ManifoldConfig(dims=tuple(self.manifold_dims))

    def ensembler_config(self):
        embed = self.manifold_dims[-1]
        return ens.EnsemblerConfig(
            in_channels=3 + 3 + shots.GBUFFER_CHANNELS + embed,
            layers=self.ens_layers, base_width=self.ens_base_width,
            width_scale=self.width_scale, conv_kernel=self.conv_kernel)


@dataclass
class BranchModels:
    dg: cols.DenoiserParams
    dp: cols.DenoiserParams
    manifold: cols.ManifoldParams
    ensembler: ens.EnsemblerParams

    def named_groups(self):
        return (("dg", self.dg), ("dp", self.dp),
                ("manifold", self.manifold), ("ensembler", self.ensembler))


@dataclass
class ModelState:
    config: ModelConfig
    branches: dict
    seed: int = 0
    provenance: str = "fresh"   # fresh -> pretrained -> finetuned -> joint/...
    epoch: int = 0
    best_val: float = float("inf")
    best_epoch: int = -1

    def named_parameters(self):
        out = []
        for branch in BRANCHES:
            for group_name, group in self.branches[branch].named_groups():
                ws, bs = group.weights, group.biases
                for i, (w, b) in enumerate(zip(ws, bs)):
                    out.append((f"{branch}.{group_name}.layer{i}.weight", w))
                    out.append((f"{branch}.{group_name}.layer{i}.bias", b))
        return out

    def column_parameters(self, column=None, with_manifold=True):
        """Parameters of the denoiser columns ('G', 'P' or both), all branches."""
        groups = {"G": ("dg",), "P": ("dp", "manifold") if with_manifold else ("dp",)}
        wanted = groups["G"] + groups["P"] if column is None else groups[column]
        out = []
        for name, p in self.named_parameters():
            if name.split(".")[1] in wanted:
                out.append((name, p))
        return out

    def ensembler_parameters(self):
        return [(n, p) for n, p in self.named_parameters()
                if n.split(".")[1] == "ensembler"]

    def param_count(self):
        return sum(p.size for _, p in self.named_parameters())


def build_model(config: ModelConfig = ModelConfig(), seed=0) -> ModelState:
    """Initialize a fresh per-branch model; bitwise deterministic in `seed`."""
    dtype = config.np_dtype()
    branches = {}
    for bi, branch in enumerate(BRANCHES):
        key = [seed, bi]
        branches[branch] = BranchModels(
            dg=cols.init_denoiser(config.denoiser_config("G"), key + [1], dtype),
            dp=cols.init_denoiser(config.denoiser_config("P"), key + [2], dtype),
            manifold=cols.init_manifold(config.manifold_config(), key + [3], dtype),
            ensembler=ens.init_ensembler(config.ensembler_config(), key + [4], dtype),
        )
    state = ModelState(config=config, branches=branches, seed=seed)
    for name, p in state.named_parameters():
        p.name = name
    return state


def clone_values(state: ModelState):
    """Snapshot of parameter values (not slots), for best-epoch restore."""
    return {name: p.data.copy() for name, p in state.named_parameters()}


def restore_values(state: ModelState, snapshot):
    for name, p in state.named_parameters():
        p.data = snapshot[name].copy()


def cast_state(state: ModelState, dtype_name) -> ModelState:
    """Deep copy of the state in another float width (for gradient checks)."""
    import dataclasses
    cfg = dataclasses.replace(state.config, dtype=dtype_name)
    out = build_model(cfg, seed=state.seed)
    dtype = cfg.np_dtype()
    src = dict(state.named_parameters())
    for name, p in out.named_parameters():
        p.data = src[name].data.astype(dtype)
        p.m = src[name].m.astype(dtype)
        p.v = src[name].v.astype(dtype)
        p.step = src[name].step
    out.provenance = state.provenance
    out.epoch = state.epoch
    out.best_val = state.best_val
    out.best_epoch = state.best_epoch
    return out


# ---------------------------------------------------------------------------
# Checkpoints

def save_state(path, state: ModelState):
    arrays = {}
    for name, p in state.named_parameters():
        arrays[name] = p.data
        arrays[f"{name}.m"] = p.m
        arrays[f"{name}.v"] = p.v
        arrays[f"{name}.step"] = np.asarray(p.step, dtype=np.int64)
    cfg = state.config
    meta = {
        "width_scale": float(cfg.width_scale),
        "depth": cfg.depth,
        "base_width": cfg.base_width,
        "recon_kernel": cfg.recon_kernel,
        "ens_layers": cfg.ens_layers,
        "ens_base_width": cfg.ens_base_width,
        "conv_kernel": cfg.conv_kernel,
        "manifold_dims": ",".join(str(d) for d in cfg.manifold_dims),
        "dtype": cfg.dtype,
        "seed": state.seed,
        "provenance": state.provenance,
        "epoch": state.epoch,
        "best_val": float(state.best_val),
        "best_epoch": state.best_epoch,
    }
    shots.write_container(path, arrays, meta, CHECKPOINT_KIND, pack=True)


def load_state(path) -> ModelState:
    arrays, meta = shots.read_container(path, CHECKPOINT_KIND)
    try:
        config = ModelConfig(
            width_scale=float(meta["width_scale"]),
            depth=int(meta["depth"]),
            base_width=int(meta["base_width"]),
            recon_kernel=int(meta["recon_kernel"]),
            ens_layers=int(meta["ens_layers"]),
            ens_base_width=int(meta["ens_base_width"]),
            conv_kernel=int(meta["conv_kernel"]),
            manifold_dims=tuple(int(d) for d in str(meta["manifold_dims"]).split(",")),
            dtype=str(meta["dtype"]),
        )
        seed = int(meta["seed"])
    except KeyError as e:
        raise LoadError(f"{path}: checkpoint missing meta {e}")
    state = build_model(config, seed=seed)
    state.provenance = str(meta.get("provenance", "fresh"))
    state.epoch = int(meta.get("epoch", 0))
    state.best_val = float(meta.get("best_val", float("inf")))
    state.best_epoch = int(meta.get("best_epoch", -1))
    for name, p in state.named_parameters():
        for suffix, slot in (("", "data"), (".m", "m"), (".v", "v")):
            key = name + suffix
            if key not in arrays:
                raise LoadError(f"{path}: checkpoint missing array '{key}'")
            arr = arrays[key]
            if arr.shape != p.data.shape:
                raise LoadError(
                    f"{path}: array '{key}' has shape {arr.shape}, "
                    f"expected {p.data.shape}")
            setattr(p, slot, arr.astype(config.np_dtype()))
        p.step = int(arrays[f"{name}.step"])
    return state


# ---------------------------------------------------------------------------
# Forward passes (tensor level; used by the trainer and the CLI)

def preprocess_branch(branch, noisy, albedo):
    if branch == "diffuse":
        return shots.preprocess_diffuse(noisy, albedo)
    return shots.preprocess_specular(noisy)


def postprocess_branch_t(branch, pre_t, albedo):
    """Differentiable inverse of the branch preprocessor (no clamp)."""
    if branch == "diffuse":
        return ad.mul(pre_t, albedo + shots.EPS_ALBEDO)
    return ad.expm1(pre_t)


def postprocess_combine_t(diffuse_pre_t, specular_pre_t, albedo):
    """Differentiable total-radiance reconstruction; mirrors the numpy version
    except for the display clamp, which would zero gradients where it binds."""
    return ad.add(postprocess_branch_t("diffuse", diffuse_pre_t, albedo),
                  postprocess_branch_t("specular", specular_pre_t, albedo))


@dataclass
class BranchForward:
    """Everything one branch produces in a full two-column forward pass."""

    noisy_pre: np.ndarray   # preprocessed noisy input (constant)
    ig: Tensor              # G column output, preprocessed domain
    ip: Tensor              # P column output
    emb_samples: Tensor     # (..., S, 12) per-sample embeddings
    fp: Tensor              # (..., 12) mean embedding
    weights: ens.WeightMaps
    ie: Tensor              # blended output, preprocessed domain


def branch_forward(state: ModelState, branch, noisy, gbuffer, descriptors,
                   albedo) -> BranchForward:
    """Full branch pass on arrays shaped (..., H, W, C) / (..., H, W, S, 36)."""
    models = state.branches[branch]
    dtype = state.config.np_dtype()
    pre = preprocess_branch(branch, noisy, albedo).astype(dtype)
    noisy_t = Tensor(pre)
    gb_t = Tensor(np.asarray(gbuffer, dtype))
    desc_t = Tensor(np.asarray(descriptors, dtype))

    kmap_g = cols.predict_kernels(noisy_t, gb_t, models.dg)
    ig = cols.apply_kernels(noisy_t, kmap_g)

    emb_samples = cols.embed_samples(desc_t, models.manifold)
    fp = ad.mean(emb_samples, axis=-2)
    kmap_p = cols.predict_kernels(noisy_t, fp, models.dp)
    ip = cols.apply_kernels(noisy_t, kmap_p)

    weights = ens.predict_weights(ig, ip, gb_t, fp, models.ensembler)
    ie = ens.combine(ig, ip, weights)
    return BranchForward(noisy_pre=pre, ig=ig, ip=ip, emb_samples=emb_samples,
                         fp=fp, weights=weights, ie=ie)


def shot_branch_inputs(shot, branch):
    if branch == "diffuse":
        return shot.noisy_diffuse, shot.gbuffer_diffuse, shot.albedo_diffuse
    return shot.noisy_specular, shot.gbuffer_specular, shot.albedo_specular


@dataclass
class DenoiseResult:
    final: np.ndarray        # ensembled total radiance (linear HDR)
    column_g: np.ndarray     # total radiance using only the G columns
    column_p: np.ndarray
    wg: dict                 # branch -> (H, W) weight map
    wp: dict
    branch_pre: dict         # branch -> blended preprocessed-domain image
    branch_pre_g: dict       # branch -> G column, preprocessed domain
    branch_pre_p: dict


def denoise_shot(state: ModelState, shot) -> DenoiseResult:
    """Inference on a full shot: both branches, both columns, blended total."""
    pre_e, pre_g, pre_p, wg, wp = {}, {}, {}, {}, {}
    for branch in BRANCHES:
        noisy, gbuf, albedo = shot_branch_inputs(shot, branch)
        fwd = branch_forward(state, branch, noisy, gbuf, shot.descriptors, albedo)
        pre_e[branch] = fwd.ie.data
        pre_g[branch] = fwd.ig.data
        pre_p[branch] = fwd.ip.data
        wg[branch] = fwd.weights.wg.data[..., 0]
        wp[branch] = fwd.weights.wp.data[..., 0]
    albedo = shot.albedo_diffuse
    final = shots.postprocess_combine(pre_e["diffuse"], pre_e["specular"], albedo)
    col_g = shots.postprocess_combine(pre_g["diffuse"], pre_g["specular"], albedo)
    col_p = shots.postprocess_combine(pre_p["diffuse"], pre_p["specular"], albedo)
    return DenoiseResult(final=final, column_g=col_g, column_p=col_p,
                         wg=wg, wp=wp, branch_pre=pre_e,
                         branch_pre_g=pre_g, branch_pre_p=pre_p)
