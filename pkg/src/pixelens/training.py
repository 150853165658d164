"""Training regimes: column pretraining, finetuning, joint training with
stop-gradient weight maps, the frozen-column ablation, and from-scratch runs.

The same step machinery serves every mode; modes differ only in which loss
terms are assembled and which parameter groups receive optimizer steps.
Learning-rate wiring: columns train at `lr_denoiser`, finetune and joint
column updates use `lr_finetune`, ensemblers always use `lr_ensembler`,
and from-scratch runs train everything at `lr_denoiser`.
"""
import dataclasses
import json
import time
from typing import Dict, List, Optional

import numpy as np

from pixelens import autodiff as ad
from pixelens import columns as cols
from pixelens import metrics
from pixelens import model as mdl
from pixelens import shots
from pixelens.autodiff import Tensor
from pixelens.optim import adam_step
from pixelens.shots import ValidationError

MODES = ("pretrain_G", "pretrain_P", "finetune", "joint", "fix_n_train",
         "full_scratch")
_MODE_RNG_ID = {m: i + 1 for i, m in enumerate(MODES)}


class StateError(RuntimeError):
    """A training mode was asked to run on an incompatible model state."""


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    mode: str
    lr_denoiser: float = 1e-4
    lr_ensembler: float = 1e-5
    lr_finetune: float = 1e-6
    w_path: float = 0.1
    batch_size: int = 8
    patch_size: int = 128
    patches_per_shot: int = 256
    spp_range: tuple = (2, 8)     # dataset protocol; consumed by generation
    seed: int = 0
    width_scale: float = 1.0      # model-build hint for callers; unused here
    max_epochs: int = 100
    patience: int = 5
    path_pairs: int = 128

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}, expected {MODES}")
        for name in ("lr_denoiser", "lr_ensembler", "lr_finetune"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")
        if self.w_path < 0:
            raise ValidationError("w_path must be >= 0")
        for name in ("batch_size", "patch_size", "patches_per_shot",
                     "max_epochs", "patience", "path_pairs"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not self.spp_range[0] <= self.spp_range[1]:
            raise ValidationError(f"bad spp_range {self.spp_range}")


def desk_config(mode, **overrides) -> TrainConfig:
    """Small-scale profile: quarter-width nets, 32-pixel patches."""
    base = dict(mode=mode, patch_size=32, patches_per_shot=16, batch_size=4,
                width_scale=0.25, max_epochs=12, patience=3)
    base.update(overrides)
    return TrainConfig(**base)


def full_config(mode, **overrides) -> TrainConfig:
    """Full-scale profile: 128-pixel patches, 256 per shot, full width."""
    return TrainConfig(mode=mode, **overrides)


# ---------------------------------------------------------------------------
# Patch sampling

@dataclasses.dataclass
class Patch:
    """Aligned crops of every training field; also used batched (leading B)."""
    noisy_diffuse: np.ndarray
    noisy_specular: np.ndarray
    gbuffer_diffuse: np.ndarray
    gbuffer_specular: np.ndarray
    descriptors: np.ndarray
    reference_diffuse: np.ndarray
    reference_specular: np.ndarray

    def branch_arrays(self, branch):
        if branch == "diffuse":
            gb = self.gbuffer_diffuse
            return (self.noisy_diffuse, gb, self.reference_diffuse,
                    gb[..., shots.GB_ALBEDO])
        gb = self.gbuffer_specular
        return (self.noisy_specular, gb, self.reference_specular,
                gb[..., shots.GB_ALBEDO])

    @property
    def albedo_diffuse(self):
        return self.gbuffer_diffuse[..., shots.GB_ALBEDO]

    def reference_total(self):
        return self.reference_diffuse + self.reference_specular


def sample_patches(shot, config: TrainConfig, rng) -> List[Patch]:
    """Crop `patches_per_shot` aligned random windows from one shot."""
    p = config.patch_size
    if p > shot.height or p > shot.width:
        raise ValidationError(
            f"patch size {p} exceeds shot {shot.height}x{shot.width}")
    if shot.reference_diffuse is None or shot.reference_specular is None:
        raise ValidationError("training shots must carry references")
    n = config.patches_per_shot
    ys = rng.integers(0, shot.height - p + 1, n)
    xs = rng.integers(0, shot.width - p + 1, n)
    out = []
    for y, x in zip(ys, xs):
        win = (slice(y, y + p), slice(x, x + p))
        out.append(Patch(
            noisy_diffuse=shot.noisy_diffuse[win],
            noisy_specular=shot.noisy_specular[win],
            gbuffer_diffuse=shot.gbuffer_diffuse[win],
            gbuffer_specular=shot.gbuffer_specular[win],
            descriptors=shot.descriptors[win],
            reference_diffuse=shot.reference_diffuse[win],
            reference_specular=shot.reference_specular[win]))
    return out


def stack_patches(patches: List[Patch]) -> Patch:
    fields = [f.name for f in dataclasses.fields(Patch)]
    return Patch(**{f: np.stack([getattr(p, f) for p in patches]) for f in fields})


# ---------------------------------------------------------------------------
# Loss assembly

def _l1(pred_t, target) -> Tensor:
    return ad.mean(ad.absolute(ad.sub(pred_t, np.asarray(target, pred_t.dtype))))


def _flatten_batch(t, batched):
    """Fold a leading batch axis into the height axis for pair sampling."""
    if not batched:
        return t
    shape = t.shape
    return ad.reshape(t, (shape[0] * shape[1],) + shape[2:])


def _path_term(emb_samples, reference, config, rng, batched) -> Tensor:
    emb = _flatten_batch(emb_samples, batched)
    ref = np.asarray(reference)
    if batched:
        ref = ref.reshape((ref.shape[0] * ref.shape[1],) + ref.shape[2:])
    res = cols.path_disentangle_loss(emb, ref, rng, num_pairs=config.path_pairs)
    return res.loss


def _column_pass(state, branch, column, batch: Patch):
    """Single-column tensor pass on (possibly batched) patch arrays."""
    models = state.branches[branch]
    dtype = state.config.np_dtype()
    noisy, gbuffer, _, albedo = batch.branch_arrays(branch)
    pre = mdl.preprocess_branch(branch, noisy, albedo).astype(dtype)
    noisy_t = Tensor(pre)
    emb = None
    if column == "G":
        aux = Tensor(np.asarray(gbuffer, dtype))
        params = models.dg
    else:
        emb = cols.embed_samples(Tensor(np.asarray(batch.descriptors, dtype)),
                                 models.manifold)
        aux = ad.mean(emb, axis=-2)
        params = models.dp
    kmap = cols.predict_kernels(noisy_t, aux, params)
    return cols.apply_kernels(noisy_t, kmap), emb


def _step_loss(state, batch: Patch, config: TrainConfig, rng) -> Tensor:
    """One batch's scalar training loss for the configured mode."""
    mode = config.mode
    dtype = state.config.np_dtype()
    batched = batch.noisy_diffuse.ndim == 4
    terms = []
    if mode in ("pretrain_G", "pretrain_P"):
        column = mode[-1]
        for branch in mdl.BRANCHES:
            noisy, _, reference, albedo = batch.branch_arrays(branch)
            out, emb = _column_pass(state, branch, column, batch)
            target = mdl.preprocess_branch(branch, reference, albedo)
            terms.append(_l1(out, target))
            if column == "P":
                path = _path_term(emb, reference, config, rng, batched)
                terms.append(ad.mul(path, np.asarray(config.w_path, dtype)))
    elif mode == "finetune":
        albedo = batch.albedo_diffuse
        total = batch.reference_total()
        for column in ("G", "P"):
            outs = {}
            for branch in mdl.BRANCHES:
                outs[branch], emb = _column_pass(state, branch, column, batch)
                if column == "P":
                    _, _, reference, _ = batch.branch_arrays(branch)
                    path = _path_term(emb, reference, config, rng, batched)
                    terms.append(ad.mul(path, np.asarray(config.w_path, dtype)))
            combined = mdl.postprocess_combine_t(outs["diffuse"],
                                                 outs["specular"], albedo)
            terms.append(_l1(combined, total))
    else:  # joint, fix_n_train, full_scratch
        for branch in mdl.BRANCHES:
            noisy, gbuffer, reference, albedo = batch.branch_arrays(branch)
            fwd = mdl.branch_forward(state, branch, noisy, gbuffer,
                                     batch.descriptors, albedo)
            out = mdl.postprocess_branch_t(branch, fwd.ie, albedo)
            terms.append(_l1(out, reference))
            path = _path_term(fwd.emb_samples, reference, config, rng, batched)
            terms.append(ad.mul(path, np.asarray(config.w_path, dtype)))
    loss = terms[0]
    for t in terms[1:]:
        loss = ad.add(loss, t)
    return loss


def _mode_param_groups(state, config: TrainConfig):
    """(parameter list, learning rate) pairs that step in this mode."""
    mode = config.mode
    if mode == "pretrain_G":
        return [(state.column_parameters("G"), config.lr_denoiser)]
    if mode == "pretrain_P":
        return [(state.column_parameters("P"), config.lr_denoiser)]
    if mode == "finetune":
        return [(state.column_parameters(None), config.lr_finetune)]
    if mode == "joint":
        return [(state.column_parameters(None), config.lr_finetune),
                (state.ensembler_parameters(), config.lr_ensembler)]
    if mode == "fix_n_train":
        return [(state.ensembler_parameters(), config.lr_ensembler)]
    return [(state.column_parameters(None), config.lr_denoiser),
            (state.ensembler_parameters(), config.lr_denoiser)]


def _zero_grads(state):
    for _, p in state.named_parameters():
        p.grad = None


# ---------------------------------------------------------------------------
# Validation and early stopping

def validation_relmse(state, val_shots, mode) -> float:
    """Stage-appropriate validation score: the image the mode optimizes."""
    scores = []
    for shot in val_shots:
        res = mdl.denoise_shot(state, shot)
        ref = shots.tone_map(shot.reference_total())
        if mode == "pretrain_G":
            score = metrics.relmse(shots.tone_map(res.column_g), ref)
        elif mode == "pretrain_P":
            score = metrics.relmse(shots.tone_map(res.column_p), ref)
        elif mode == "finetune":
            score = 0.5 * (metrics.relmse(shots.tone_map(res.column_g), ref)
                           + metrics.relmse(shots.tone_map(res.column_p), ref))
        else:
            score = metrics.relmse(shots.tone_map(res.final), ref)
        scores.append(score)
    return float(np.mean(scores))


@dataclasses.dataclass
class StopDecision:
    stop: bool
    best_index: int
    error: bool = False


def early_stop(history: List[float], patience: int) -> StopDecision:
    """Stop once the best score is `patience` epochs old; NaN stops at once."""
    if not history:
        raise ValidationError("empty validation history")
    finite = [v for v in history if np.isfinite(v)]
    if len(finite) != len(history):
        best = int(np.argmin(finite)) if finite else -1
        return StopDecision(stop=True, best_index=best, error=True)
    best = int(np.argmin(history))
    return StopDecision(stop=(len(history) - 1 - best) >= patience,
                        best_index=best)


# ---------------------------------------------------------------------------
# Training loops

@dataclasses.dataclass
class TrainResult:
    state: mdl.ModelState
    history: List[dict]
    best_val: float
    best_epoch: int
    stopped_early: bool = False
    error: Optional[str] = None


def _require_references(train_shots, val_shots):
    if not train_shots:
        raise ValidationError("training dataset is empty")
    if not val_shots:
        raise ValidationError("validation dataset is empty")
    for shot in list(train_shots) + list(val_shots):
        if shot.reference_diffuse is None or shot.reference_specular is None:
            raise ValidationError("every shot needs both branch references")


def _train_loop(state, train_shots, val_shots, config, log_path) -> TrainResult:
    rng = np.random.default_rng([config.seed, _MODE_RNG_ID[config.mode]])
    groups = _mode_param_groups(state, config)
    best_snapshot = mdl.clone_values(state)
    best_val = float("inf")
    best_epoch = -1
    history: List[dict] = []
    val_history: List[float] = []
    stopped_early = False
    error = None
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(config.max_epochs):
            t0 = time.monotonic()
            pool: Dict[int, List[Patch]] = {}
            for shot in train_shots:
                for patch in sample_patches(shot, config, rng):
                    # descriptor sample counts differ across spp; a batch
                    # can only stack patches that share one
                    pool.setdefault(patch.descriptors.shape[-2], []).append(patch)
            batches = []
            for spp in sorted(pool):
                group = pool[spp]
                order = rng.permutation(len(group))
                for start in range(0, len(group), config.batch_size):
                    batches.append(stack_patches(
                        [group[i] for i in order[start:start + config.batch_size]]))
            losses = []
            for bi in rng.permutation(len(batches)):
                batch = batches[bi]
                loss = _step_loss(state, batch, config, rng)
                if not np.isfinite(loss.data):
                    error = f"non-finite training loss at epoch {epoch}"
                    break
                _zero_grads(state)
                loss.backward()
                for params, lr in groups:
                    for _, p in params:
                        adam_step(p, lr)
                losses.append(float(loss.data))
            if error:
                stopped_early = True
                break
            val = validation_relmse(state, val_shots, config.mode)
            val_history.append(val)
            record = {"epoch": epoch, "mode": config.mode,
                      "train_loss": float(np.mean(losses)),
                      "val_relmse": val,
                      "wall_time": time.monotonic() - t0}
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if np.isfinite(val) and val < best_val:
                best_val = val
                best_epoch = epoch
                best_snapshot = mdl.clone_values(state)
            decision = early_stop(val_history, config.patience)
            if decision.error:
                error = f"non-finite validation score at epoch {epoch}"
                stopped_early = True
                break
            if decision.stop:
                stopped_early = True
                break
    finally:
        if log_fh:
            log_fh.close()
    mdl.restore_values(state, best_snapshot)
    state.epoch += len(history)
    if best_epoch >= 0:
        state.best_val = best_val
        state.best_epoch = best_epoch
    return TrainResult(state=state, history=history, best_val=best_val,
                       best_epoch=best_epoch, stopped_early=stopped_early,
                       error=error)


def pretrain(state, train_shots, val_shots, config: TrainConfig,
             log_path=None) -> TrainResult:
    """Column pretraining (`pretrain_G` / `pretrain_P`) or the low-rate
    `finetune` stage that trains both columns through the combined image."""
    if config.mode not in ("pretrain_G", "pretrain_P", "finetune"):
        raise StateError(f"pretrain cannot run mode {config.mode!r}")
    if config.mode == "finetune" and state.provenance == "fresh":
        raise StateError("finetune needs pretrained columns, state is fresh")
    _require_references(train_shots, val_shots)
    result = _train_loop(state, train_shots, val_shots, config, log_path)
    if result.error is None:
        state.provenance = ("finetuned" if config.mode == "finetune"
                            else "pretrained")
    return result


def joint_train(state, train_shots, val_shots, config: TrainConfig,
                log_path=None) -> TrainResult:
    """Ensembled training (`joint`), the frozen-column ablation
    (`fix_n_train`), or everything-from-scratch (`full_scratch`)."""
    if config.mode not in ("joint", "fix_n_train", "full_scratch"):
        raise StateError(f"joint_train cannot run mode {config.mode!r}")
    if config.mode != "full_scratch" and state.provenance == "fresh":
        raise StateError(
            f"mode {config.mode!r} needs a pretrained state, got 'fresh'")
    _require_references(train_shots, val_shots)
    if config.mode == "full_scratch":
        fresh = mdl.build_model(state.config, seed=state.seed)
        state.branches = fresh.branches
        state.provenance = "fresh"
        state.epoch = 0
        state.best_val = float("inf")
        state.best_epoch = -1
    result = _train_loop(state, train_shots, val_shots, config, log_path)
    if result.error is None:
        state.provenance = config.mode
    return result


# ---------------------------------------------------------------------------
# Gradient-masking verification

@dataclasses.dataclass
class MaskCheckReport:
    max_err_ig: float          # |autodiff - W_G*sgn/N| worst case
    max_err_ip: float
    frozen_g_grad_norm: float  # column-G parameter grads with W_G forced to 0
    ip_grad_max_when_wg_one: float
    tolerance: float
    passed: bool


def _masked_l1(fwd, reference_pre, mask3):
    n = float(mask3.sum())
    diff = ad.absolute(ad.sub(fwd.ie, reference_pre))
    return ad.mul(ad.sum_(ad.mul(diff, mask3)), np.asarray(1.0 / n, diff.dtype))


def gradient_mask_check(state, shot, region_mask=None,
                        tolerance=1e-6) -> MaskCheckReport:
    """Numerically verify how the weight maps gate column gradients.

    Checks, in 64-bit: (a) d(loss)/d(I_G) equals (1/N) W_G sgn(I_E - ref)
    inside the mask; (b) the same for the P column; (c) overriding the
    ensembler's final bias so W_G underflows to exactly 0 kills every
    G-column parameter gradient, and the mirrored override kills d/d(I_P).
    """
    s64 = mdl.cast_state(state, "float64")
    max_err_g = max_err_p = 0.0
    frozen_norm = 0.0
    ip_max = 0.0
    for branch in mdl.BRANCHES:
        noisy, gbuffer, albedo = mdl.shot_branch_inputs(shot, branch)
        reference = (shot.reference_diffuse if branch == "diffuse"
                     else shot.reference_specular)
        ref_pre = mdl.preprocess_branch(branch, reference, albedo).astype(np.float64)
        mask = (np.ones(ref_pre.shape[:2], bool) if region_mask is None
                else np.asarray(region_mask, bool))
        mask3 = np.broadcast_to(mask[..., None], ref_pre.shape).astype(np.float64)
        n = float(mask3.sum())

        fwd = mdl.branch_forward(s64, branch, noisy, gbuffer,
                                 shot.descriptors, albedo)
        _zero_grads(s64)
        _masked_l1(fwd, ref_pre, mask3).backward()
        sgn = np.sign(fwd.ie.data - ref_pre) * mask3 / n
        max_err_g = max(max_err_g,
                        float(np.abs(fwd.ig.grad - fwd.weights.wg.data * sgn).max()))
        max_err_p = max(max_err_p,
                        float(np.abs(fwd.ip.grad - fwd.weights.wp.data * sgn).max()))

        # (c) bias override: +-1000 logits underflow the softmax to exact 0/1
        for wg_zero in (True, False):
            forced = mdl.cast_state(state, "float64")
            bias = forced.branches[branch].ensembler.biases[-1]
            bias.data = bias.data + (np.array([-1000.0, 1000.0]) if wg_zero
                                     else np.array([1000.0, -1000.0]))
            ffwd = mdl.branch_forward(forced, branch, noisy, gbuffer,
                                      shot.descriptors, albedo)
            _zero_grads(forced)
            _masked_l1(ffwd, ref_pre, mask3).backward()
            if wg_zero:
                assert float(ffwd.weights.wg.data.max()) == 0.0
                for _, p in forced.column_parameters("G", with_manifold=False):
                    if p.grad is not None:
                        frozen_norm = max(frozen_norm, float(np.abs(p.grad).max()))
            else:
                ip_max = max(ip_max, float(np.abs(ffwd.ip.grad).max()))
    passed = (max_err_g < tolerance and max_err_p < tolerance
              and frozen_norm == 0.0 and ip_max == 0.0)
    return MaskCheckReport(max_err_ig=max_err_g, max_err_ip=max_err_p,
                           frozen_g_grad_norm=frozen_norm,
                           ip_grad_max_when_wg_one=ip_max,
                           tolerance=tolerance, passed=passed)


@dataclasses.dataclass
class FrozenWeightReport:
    max_rel_error: float
    checks: int
    ensembler_grads_match: bool
    passed: bool


def frozen_weight_fd_check(state, shot, branch="diffuse", samples=4,
                           step=1e-5, rel_tol=1e-3, seed=0) -> FrozenWeightReport:
    """Two stop-gradient consequences, checked numerically in 64-bit.

    First: the autodiff gradient of G-column weights equals central
    differences of a loss in which the weight maps and the P column are
    frozen at their current values (the weight maps carry no live path from
    the G column). Second: the ensembler's gradients are bitwise identical
    when both column images are replaced by detached constants.
    """
    s64 = mdl.cast_state(state, "float64")
    models = s64.branches[branch]
    noisy, gbuffer, albedo = mdl.shot_branch_inputs(shot, branch)
    reference = (shot.reference_diffuse if branch == "diffuse"
                 else shot.reference_specular)
    ref_pre = mdl.preprocess_branch(branch, reference, albedo).astype(np.float64)

    fwd = mdl.branch_forward(s64, branch, noisy, gbuffer, shot.descriptors, albedo)
    _zero_grads(s64)
    ad.mean(ad.absolute(ad.sub(fwd.ie, ref_pre))).backward()
    auto = {name: p.grad.copy() for name, p in s64.named_parameters()
            if name.startswith(f"{branch}.dg.") and p.grad is not None}

    wg = fwd.weights.wg.data.copy()
    wp = fwd.weights.wp.data.copy()
    ip = fwd.ip.data.copy()
    pre = fwd.noisy_pre
    gb64 = np.asarray(gbuffer, np.float64)

    def frozen_loss():
        kmap = cols.predict_kernels(Tensor(pre), Tensor(gb64), models.dg)
        ig = cols.apply_kernels(Tensor(pre), kmap).data
        ie = ig * wg + ip * wp
        return float(np.mean(np.abs(ie - ref_pre)))

    rng = np.random.default_rng(seed)
    worst = 0.0
    checks = 0
    for name, grad in sorted(auto.items()):
        p = dict(s64.named_parameters())[name]
        flat = p.data.reshape(-1)
        for idx in rng.choice(flat.size, size=min(samples, flat.size),
                              replace=False):
            keep = flat[idx]
            flat[idx] = keep + step
            up = frozen_loss()
            flat[idx] = keep - step
            down = frozen_loss()
            flat[idx] = keep
            fd = (up - down) / (2 * step)
            a = grad.reshape(-1)[idx]
            scale = max(abs(a), abs(fd))
            err = 0.0 if scale < 1e-12 else abs(a - fd) / scale
            worst = max(worst, err)
            checks += 1

    # detached-column rerun: ensembler grads must not move at all
    ens_auto = {n: p.grad.copy() for n, p in s64.named_parameters()
                if n.startswith(f"{branch}.ensembler.")}
    from pixelens import ensemble as ens
    ig_c, ip_c = Tensor(fwd.ig.data.copy()), Tensor(ip)
    weights2 = ens.predict_weights(ig_c, ip_c, Tensor(gb64),
                                   Tensor(fwd.fp.data.copy()), models.ensembler)
    ie2 = ens.combine(ig_c, ip_c, weights2)
    _zero_grads(s64)
    ad.mean(ad.absolute(ad.sub(ie2, ref_pre))).backward()
    match = all(np.array_equal(p.grad, ens_auto[n])
                for n, p in s64.named_parameters()
                if n.startswith(f"{branch}.ensembler."))
    return FrozenWeightReport(max_rel_error=worst, checks=checks,
                              ensembler_grads_match=match,
                              passed=worst < rel_tol and match)
