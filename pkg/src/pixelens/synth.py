"""Synthetic shot generator: analytic scenes plus controllable Monte Carlo noise.

Scenes are ray-cast analytically (spheres resting on a ground plane, a
pinhole camera pitched down so every ray hits geometry). Radiance ground
truth is built from smooth radial-basis blobs in image space; noisy samples
are lognormal draws reparameterized to hit the true mean exactly, with
variance noise_scale^2 * (1 + difficulty) so marked regions are harder.

Depth is normalized to [0, 1] per shot *before* derivatives and variances
are computed; the shot's scale (the maximum hit distance) is stored as
manifest meta ``depth_scale``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pixelens import shots
from pixelens.shots import Shot, ValidationError

_MEAN_FLOOR = 1e-12  # below this a channel is treated as exactly dark


@dataclass(frozen=True)
class SynthConfig:
    resolution: int = 64
    spp: int = 4
    seed: int = 0
    noise_scale: float = 0.15
    difficulty_fields: int = 3

    def __post_init__(self):
        if self.resolution < 8:
            raise ValidationError(f"resolution must be >= 8, got {self.resolution}")
        if self.spp < 1:
            raise ValidationError(f"spp must be >= 1, got {self.spp}")
        if self.noise_scale < 0:
            raise ValidationError(f"noise_scale must be >= 0, got {self.noise_scale}")
        if self.difficulty_fields < 0:
            raise ValidationError(
                f"difficulty_fields must be >= 0, got {self.difficulty_fields}")


@dataclass
class SceneTruth:
    """Noise-free per-pixel ground truth plus the analytic scene description."""

    albedo: np.ndarray         # (H, W, 3)
    normal: np.ndarray         # (H, W, 3), unit length
    depth: np.ndarray          # (H, W), normalized to [0, 1]
    depth_scale: float         # max hit distance; depth * depth_scale = ray t
    object_id: np.ndarray      # (H, W) int: 0 ground plane, 1 + i sphere i
    true_diffuse: np.ndarray   # (H, W, 3)
    true_specular: np.ndarray  # (H, W, 3)
    difficulty: np.ndarray     # (H, W) in [0, 1]
    scene: dict = field(default_factory=dict)


def _camera(res):
    origin = np.array([0.0, 2.2, -2.2])
    look = np.array([0.0, 0.0, 1.2])
    fwd = look - origin
    fwd /= np.linalg.norm(fwd)
    world_up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, world_up)
    right /= np.linalg.norm(right)
    up = np.cross(right, fwd)
    tan_half = np.tan(np.deg2rad(20.0))  # 40 degree square frustum

    j = (np.arange(res) + 0.5) / res * 2.0 - 1.0
    i = 1.0 - (np.arange(res) + 0.5) / res * 2.0
    dirs = (fwd[None, None]
            + tan_half * (j[None, :, None] * right[None, None]
                          + i[:, None, None] * up[None, None]))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    cam = {"origin": origin, "forward": fwd, "right": right, "up": up,
           "tan_half_fov": tan_half}
    return cam, dirs


def _blob_field(uv, centers, sigmas, amps):
    """Sum of Gaussian blobs over (H, W, 2) image coordinates."""
    out = np.zeros(uv.shape[:2] + (np.atleast_2d(amps).shape[1],))
    for c, s, a in zip(centers, sigmas, np.atleast_2d(amps)):
        d2 = ((uv - c) ** 2).sum(-1)
        out += np.exp(-d2 / (2.0 * s * s))[..., None] * a
    return out


def gen_truth(config: SynthConfig) -> SceneTruth:
    """Ray-cast the analytic scene and evaluate the smooth radiance fields."""
    res = config.resolution
    rng = np.random.default_rng([config.seed, 1])
    cam, dirs = _camera(res)
    origin = cam["origin"]
    if not (dirs[..., 1] < -1e-6).all():
        raise RuntimeError("camera geometry broke the all-rays-hit guarantee")

    n_spheres = int(2 + rng.integers(0, 3))
    spheres = []
    for _ in range(n_spheres):
        r = rng.uniform(0.25, 0.5)
        cx = rng.uniform(-1.1, 1.1)
        cz = rng.uniform(0.2, 2.0)
        color = rng.uniform(0.2, 0.9, 3)
        spheres.append({"center": np.array([cx, r, cz]), "radius": r, "color": color})

    # nearest-hit search: ground plane y=0 plus each sphere
    t_hit = -origin[1] / dirs[..., 1]
    obj = np.zeros((res, res), dtype=np.int64)
    for si, sp in enumerate(spheres):
        oc = origin - sp["center"]
        b = (dirs * oc).sum(-1)
        c2 = (oc * oc).sum() - sp["radius"] ** 2
        disc = b * b - c2
        ok = disc > 0
        t = np.where(ok, -b - np.sqrt(np.where(ok, disc, 0.0)), np.inf)
        closer = (t > 1e-6) & (t < t_hit)
        t_hit = np.where(closer, t, t_hit)
        obj = np.where(closer, si + 1, obj)

    p = origin[None, None] + t_hit[..., None] * dirs
    albedo = np.empty((res, res, 3))
    phases = np.array([0.0, 2.1, 4.2])
    plane_albedo = np.clip(
        0.45 + 0.25 * np.sin(1.3 * p[..., 0:1] + 0.7 + phases)
        * np.cos(0.9 * p[..., 2:3] - 0.4), 0.05, 0.95)
    albedo[:] = plane_albedo
    normal = np.zeros((res, res, 3))
    normal[..., 1] = 1.0  # plane normal, exact
    for si, sp in enumerate(spheres):
        mask = obj == si + 1
        sn = (p - sp["center"]) / sp["radius"]
        sn /= np.linalg.norm(sn, axis=-1, keepdims=True)
        shade = 0.85 + 0.15 * np.sin(3.0 * p.sum(-1))
        alb = np.clip(sp["color"][None, None] * shade[..., None], 0.05, 0.95)
        albedo[mask] = alb[mask]
        normal[mask] = sn[mask]

    depth_scale = float(t_hit.max())
    depth = t_hit / depth_scale

    # smooth image-space radiance and difficulty fields
    rng_l = np.random.default_rng([config.seed, 2])
    uv = np.stack(np.meshgrid((np.arange(res) + 0.5) / res,
                              (np.arange(res) + 0.5) / res, indexing="xy"), -1)
    n_irr = 4
    irr = 0.3 + _blob_field(
        uv,
        rng_l.uniform(0.1, 0.9, (n_irr, 2)),
        rng_l.uniform(0.06, 0.2, n_irr),
        rng_l.uniform(0.2, 1.0, (n_irr, 3)))
    true_diffuse = albedo * irr

    m = config.difficulty_fields
    diff_centers = rng_l.uniform(0.15, 0.85, (m, 2))
    diff_sigmas = rng_l.uniform(0.08, 0.18, m)
    if m > 0:
        difficulty = np.clip(
            _blob_field(uv, diff_centers, diff_sigmas, np.ones((m, 1)))[..., 0],
            0.0, 1.0)
    else:
        difficulty = np.zeros((res, res))

    n_spec = 3
    spec = 0.02 + _blob_field(
        uv,
        rng_l.uniform(0.1, 0.9, (n_spec, 2)),
        rng_l.uniform(0.03, 0.1, n_spec),
        rng_l.uniform(0.3, 1.2, (n_spec, 3)))
    if m > 0:  # difficult regions carry extra sharp highlights
        spec += _blob_field(uv, diff_centers,
                            np.maximum(diff_sigmas * 0.4, 0.02),
                            rng_l.uniform(0.5, 1.5, (m, 3)))
    true_specular = spec

    return SceneTruth(
        albedo=albedo, normal=normal, depth=depth, depth_scale=depth_scale,
        object_id=obj, true_diffuse=true_diffuse, true_specular=true_specular,
        difficulty=difficulty,
        scene={"camera": cam, "spheres": spheres},
    )


def _lognormal_with_moments(mean_map, var_map, spp, rng):
    """(H,W,3) mean + variance targets -> (H,W,S,3) lognormal samples.

    sigma^2 = ln(1 + v/m^2), mu = ln m - sigma^2/2 gives E[x] = m and
    Var[x] = v exactly. Channels at mean <= _MEAN_FLOOR stay exactly at
    their mean (a dark pixel has dark samples).
    """
    h, w, _ = mean_map.shape
    out = np.broadcast_to(mean_map[:, :, None, :], (h, w, spp, 3)).copy()
    z = rng.standard_normal((h, w, spp, 3))
    live = mean_map > _MEAN_FLOOR
    m = np.where(live, mean_map, 1.0)
    sigma2 = np.log1p(var_map / (m * m))
    mu = np.log(m) - 0.5 * sigma2
    sampled = np.exp(mu[:, :, None, :] + np.sqrt(sigma2)[:, :, None, :] * z)
    return np.where(live[:, :, None, :], sampled, out)


def sample_noisy(truth: SceneTruth, config: SynthConfig):
    """Draw per-branch radiance samples. Returns (diffuse, specular), (H,W,S,3)."""
    h, w, _ = truth.true_diffuse.shape
    spp = config.spp
    if config.noise_scale == 0.0:
        d = np.broadcast_to(truth.true_diffuse[:, :, None, :], (h, w, spp, 3)).copy()
        s = np.broadcast_to(truth.true_specular[:, :, None, :], (h, w, spp, 3)).copy()
        return d, s
    var = (config.noise_scale ** 2) * (1.0 + truth.difficulty)[..., None]
    rng_d = np.random.default_rng([config.seed, 11])
    rng_s = np.random.default_rng([config.seed, 12])
    d = _lognormal_with_moments(truth.true_diffuse, var, spp, rng_d)
    s = _lognormal_with_moments(truth.true_specular, var, spp, rng_s)
    return d, s


def feature_samples(truth: SceneTruth, config: SynthConfig, branch: str):
    """Per-sample feature draws used for G-buffer means/derivatives/variances.

    Exposed so the variance channels can be recomputed independently.
    """
    if branch not in ("diffuse", "specular"):
        raise ValidationError(f"unknown branch '{branch}'")
    h, w = truth.depth.shape
    spp = config.spp
    rng = np.random.default_rng([config.seed, 21 if branch == "diffuse" else 22])
    bump = config.noise_scale * (1.0 + truth.difficulty)
    sig_a = (0.25 * bump)[..., None, None]
    sig_n = (0.20 * bump)[..., None, None]
    sig_d = (0.10 * bump)[..., None]

    albedo_s = np.maximum(
        truth.albedo[:, :, None, :] + sig_a * rng.standard_normal((h, w, spp, 3)), 0.0)
    n = truth.normal[:, :, None, :] + sig_n * rng.standard_normal((h, w, spp, 3))
    normal_s = n / np.linalg.norm(n, axis=-1, keepdims=True)
    depth_s = np.clip(
        truth.depth[:, :, None] + sig_d * rng.standard_normal((h, w, spp)), 0.0, 1.0)
    return albedo_s, normal_s, depth_s


def central_diff(field):
    """Central differences with replicated borders; constant fields give 0."""
    f = np.asarray(field)
    squeeze = f.ndim == 2
    if squeeze:
        f = f[..., None]
    p = np.pad(f, ((1, 1), (1, 1), (0, 0)), mode="edge")
    ddx = (p[1:-1, 2:] - p[1:-1, :-2]) * 0.5
    ddy = (p[2:, 1:-1] - p[:-2, 1:-1]) * 0.5
    if squeeze:
        return ddx[..., 0], ddy[..., 0]
    return ddx, ddy


def _sample_var(samples, axis):
    """Unbiased per-pixel variance; defined as 0 at a single sample."""
    if samples.shape[axis] < 2:
        shape = list(samples.shape)
        del shape[axis]
        return np.zeros(shape)
    return samples.var(axis=axis, ddof=1)


def _gbuffer_from_samples(albedo_s, normal_s, depth_s):
    h, w = depth_s.shape[:2]
    gb = np.zeros((h, w, shots.GBUFFER_CHANNELS))
    alb = albedo_s.mean(axis=2)
    nrm = normal_s.mean(axis=2)
    dep = depth_s.mean(axis=2)
    gb[..., shots.GB_ALBEDO] = alb
    gb[..., shots.GB_ALBEDO_DDX], gb[..., shots.GB_ALBEDO_DDY] = central_diff(alb)
    gb[..., shots.GB_ALBEDO_VAR] = _sample_var(albedo_s, 2).mean(-1)
    gb[..., shots.GB_NORMAL] = nrm
    gb[..., shots.GB_NORMAL_DDX], gb[..., shots.GB_NORMAL_DDY] = central_diff(nrm)
    gb[..., shots.GB_NORMAL_VAR] = _sample_var(normal_s, 2).mean(-1)
    gb[..., shots.GB_DEPTH] = dep
    gb[..., shots.GB_DEPTH_DDX], gb[..., shots.GB_DEPTH_DDY] = central_diff(dep)
    gb[..., shots.GB_DEPTH_VAR] = _sample_var(depth_s, 2)
    return gb


# Markov tag machinery: rows are cumulative transition probabilities from
# each tag code; state 0 (no interaction) is absorbing, so once a chain
# terminates every later vertex slot stays zero-padded.
_EASY_START = np.array([0.00, 0.80, 0.15, 0.04, 0.01])
_HARD_START = np.array([0.00, 0.35, 0.30, 0.20, 0.15])
_EASY_TRANS = np.array([
    [1.00, 0.00, 0.00, 0.00, 0.00],
    [0.55, 0.30, 0.10, 0.03, 0.02],
    [0.45, 0.30, 0.15, 0.05, 0.05],
    [0.40, 0.25, 0.15, 0.15, 0.05],
    [0.40, 0.25, 0.15, 0.05, 0.15],
])
_HARD_TRANS = np.array([
    [1.00, 0.00, 0.00, 0.00, 0.00],
    [0.25, 0.30, 0.25, 0.10, 0.10],
    [0.20, 0.25, 0.30, 0.15, 0.10],
    [0.15, 0.20, 0.25, 0.30, 0.10],
    [0.15, 0.20, 0.25, 0.10, 0.30],
])


def _step_chain(cdf_rows, u):
    # first index whose cumulative probability exceeds u
    return (u[..., None] > cdf_rows).sum(-1)


def gen_descriptors(truth: SceneTruth, total_samples, config: SynthConfig):
    """Build (H, W, S, 36) per-sample path descriptors.

    Radiance-linked channels are exact (undivided = sample * pdf); the path
    channels are statistical surrogates whose distributions shift with the
    difficulty field, so they carry a learnable signal about region hardness.
    """
    h, w, spp, _ = total_samples.shape
    rng = np.random.default_rng([config.seed, 13])
    desc = np.zeros((h, w, spp, shots.DESCRIPTOR_CHANNELS))

    pdf = 1.0 - 0.9 * rng.random((h, w, spp))  # in (0.1, 1.0]
    desc[..., shots.DESC_PDF] = pdf
    desc[..., shots.DESC_UNDIVIDED] = total_samples * pdf[..., None]

    n_lights = max(2, config.difficulty_fields + 1)
    energies = rng.uniform(0.5, 2.0, (n_lights, 3))
    u = rng.random((h, w, spp))
    skew = 1.0 + 2.0 * truth.difficulty[..., None]  # hard regions favor light 0
    idx = np.minimum((u ** skew * n_lights).astype(np.int64), n_lights - 1)
    desc[..., shots.DESC_ENERGY] = energies[idx]

    hard = (truth.difficulty > 0.5)[..., None]
    easy_start_cdf = np.cumsum(_EASY_START)
    hard_start_cdf = np.cumsum(_HARD_START)
    easy_cdf = np.cumsum(_EASY_TRANS, axis=1)
    hard_cdf = np.cumsum(_HARD_TRANS, axis=1)

    u0 = rng.random((h, w, spp))
    start_cdf = np.where(hard[..., None], hard_start_cdf, easy_start_cdf)
    state = _step_chain(start_cdf, u0)
    tags = np.zeros((h, w, spp, shots.MAX_VERTICES), dtype=np.int64)
    tags[..., 0] = state
    for v in range(1, shots.MAX_VERTICES):
        uv_ = rng.random((h, w, spp))
        rows = np.where(hard[..., None], hard_cdf[state], easy_cdf[state])
        state = _step_chain(rows, uv_)
        tags[..., v] = state
    desc[..., shots.DESC_TAGS] = tags

    factors = rng.uniform(0.25, 0.95, (h, w, spp, shots.MAX_VERTICES, 3))
    cumulative = np.cumprod(factors, axis=3)
    alive = (tags > 0)[..., None]
    desc[..., shots.DESC_ATTEN] = np.where(alive, cumulative, 0.0).reshape(
        h, w, spp, 3 * shots.MAX_VERTICES)

    ru = rng.random((h, w, spp, shots.SCATTER_VERTICES))
    st = tags[..., :shots.SCATTER_VERTICES]
    rough = np.zeros_like(ru)
    rough = np.where(st == shots.TAG_DIFFUSE, 0.6 + 0.4 * ru, rough)
    rough = np.where(st == shots.TAG_GLOSSY, 0.08 + 0.42 * ru, rough)
    desc[..., shots.DESC_ROUGH] = rough  # specular tags and padding stay 0

    return desc.astype(np.float32)


def gen_shot(config: SynthConfig) -> Shot:
    """Generate one fully validated synthetic shot, bitwise deterministic."""
    truth = gen_truth(config)
    d_samples, s_samples = sample_noisy(truth, config)

    gb_d = _gbuffer_from_samples(*feature_samples(truth, config, "diffuse"))
    gb_s = _gbuffer_from_samples(*feature_samples(truth, config, "specular"))
    descriptors = gen_descriptors(truth, d_samples + s_samples, config)

    shot = Shot(
        width=config.resolution, height=config.resolution, spp=config.spp,
        noisy_diffuse=d_samples.mean(axis=2).astype(np.float32),
        noisy_specular=s_samples.mean(axis=2).astype(np.float32),
        gbuffer_diffuse=gb_d.astype(np.float32),
        gbuffer_specular=gb_s.astype(np.float32),
        descriptors=descriptors,
        reference_diffuse=truth.true_diffuse.astype(np.float32),
        reference_specular=truth.true_specular.astype(np.float32),
        meta={
            "scene_id": f"synth_{config.seed:04d}",
            "seed": config.seed,
            "generator": "synthgen v1",
            "noise_scale": float(config.noise_scale),
            "depth_scale": truth.depth_scale,
        },
    )
    shots.validate_shot(shot)
    return shot
