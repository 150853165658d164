"""Kernel-predicting denoiser columns and the path-manifold embedding.

Two column families share one architecture and differ only in their
auxiliary input: the G column sees the 24 geometry-buffer channels, the P
column sees a learned 12-channel embedding of the per-sample path
descriptors. Each column predicts a softmax-normalized filter kernel per
pixel and applies it to the preprocessed noisy radiance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pixelens import autodiff as ad
from pixelens import shots
from pixelens.autodiff import Parameter, Tensor
from pixelens.optim import xavier_init

LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class DenoiserConfig:
    input_channels: int        # 27 for the G column, 15 for the P column
    depth: int = 9             # total conv layers; the last one emits kernel logits
    base_width: int = 100
    width_scale: float = 1.0
    recon_kernel: int = 21
    conv_kernel: int = 5

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.recon_kernel % 2 == 0 or self.recon_kernel < 1:
            raise ValueError(f"recon_kernel must be odd, got {self.recon_kernel}")
        if self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.input_channels < 4:
            raise ValueError(f"input_channels must include radiance + aux, "
                             f"got {self.input_channels}")
        if self.width_scale <= 0:
            raise ValueError(f"width_scale must be > 0, got {self.width_scale}")

    @property
    def width(self):
        return max(4, round(self.base_width * self.width_scale))

    def layer_shapes(self):
        """Conv weight shapes, input to output."""
        k, w = self.conv_kernel, self.width
        dims = [self.input_channels] + [w] * (self.depth - 1) + [self.recon_kernel ** 2]
        return [(k, k, dims[i], dims[i + 1]) for i in range(self.depth)]

    def param_count(self):
        return sum(int(np.prod(s)) + s[-1] for s in self.layer_shapes())


@dataclass(frozen=True)
class ManifoldConfig:
    dims: tuple = (shots.DESCRIPTOR_CHANNELS, 64, 32, 12)
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if len(self.dims) < 2:
            raise ValueError("manifold needs at least one layer")
        if self.dims[0] != shots.DESCRIPTOR_CHANNELS:
            raise ValueError(
                f"manifold input must be {shots.DESCRIPTOR_CHANNELS} channels, "
                f"got {self.dims[0]}")

    @property
    def embed_channels(self):
        return self.dims[-1]

    def param_count(self):
        return sum(self.dims[i] * self.dims[i + 1] + self.dims[i + 1]
                   for i in range(len(self.dims) - 1))


@dataclass
class DenoiserParams:
    config: DenoiserConfig
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass
class ManifoldParams:
    config: ManifoldConfig
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_denoiser(config: DenoiserConfig, seed, dtype=np.float32) -> DenoiserParams:
    """Xavier weights, zero biases. `seed` may be an int or entropy list."""
    base = list(np.atleast_1d(seed))
    params = DenoiserParams(config)
    for i, shape in enumerate(config.layer_shapes()):
        params.weights.append(Parameter(xavier_init(shape, base + [i], dtype)))
        params.biases.append(Parameter(np.zeros(shape[-1], dtype)))
    return params


def init_manifold(config: ManifoldConfig, seed, dtype=np.float32) -> ManifoldParams:
    base = list(np.atleast_1d(seed))
    params = ManifoldParams(config)
    for i in range(len(config.dims) - 1):
        shape = (config.dims[i], config.dims[i + 1])
        params.weights.append(Parameter(xavier_init(shape, base + [i], dtype)))
        params.biases.append(Parameter(np.zeros(shape[-1], dtype)))
    return params


@dataclass
class KernelMap:
    """Per-pixel reconstruction kernels, (..., H, W, k*k), convex per pixel."""

    values: Tensor
    size: int

    def validate(self, atol=1e-5):
        data = self.values.data
        if data.shape[-1] != self.size * self.size:
            raise ValueError(
                f"kernel map has {data.shape[-1]} taps, expected {self.size ** 2}")
        if (data < 0).any():
            raise ValueError("kernel map has negative weights")
        sums = data.sum(-1)
        if np.abs(sums - 1.0).max() > atol:
            raise ValueError(
                f"kernel map rows must sum to 1, worst |sum-1| = "
                f"{np.abs(sums - 1.0).max():.3g}")


def predict_kernels(noisy, aux, params: DenoiserParams) -> KernelMap:
    """Run the conv stack on concat(noisy, aux) and softmax the logits."""
    noisy, aux = ad.as_tensor(noisy), ad.as_tensor(aux)
    cfg = params.config
    if noisy.shape[-1] + aux.shape[-1] != cfg.input_channels:
        raise ValueError(
            f"column expects {cfg.input_channels} input channels, got "
            f"{noisy.shape[-1]} radiance + {aux.shape[-1]} aux")
    x = ad.concat([noisy, aux], axis=-1)
    for i in range(cfg.depth - 1):
        x = ad.relu(ad.conv2d(x, params.weights[i], params.biases[i]))
    logits = ad.conv2d(x, params.weights[-1], params.biases[-1])
    return KernelMap(values=ad.softmax_channels(logits), size=cfg.recon_kernel)


def apply_kernels(image, kmap: KernelMap) -> Tensor:
    """Filter the preprocessed radiance with the per-pixel kernels."""
    return ad.apply_kernels(ad.as_tensor(image), kmap.values, kmap.size)


def embed_samples(descriptors, params: ManifoldParams) -> Tensor:
    """Pointwise MLP over (..., S, 36) descriptors -> (..., S, 12) embeddings."""
    t = ad.as_tensor(descriptors)
    if t.shape[-1] != params.config.dims[0]:
        raise ValueError(
            f"descriptors have {t.shape[-1]} channels, expected {params.config.dims[0]}")
    if t.ndim < 2 or t.shape[-2] == 0:
        raise ValueError("embed needs at least one sample per pixel")
    lead = t.shape[:-1]
    x = ad.reshape(t, (-1, t.shape[-1]))
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = ad.add(ad.matmul(x, w), b)
        if i < n_layers - 1:
            x = ad.leaky_relu(x, params.config.slope)
    return ad.reshape(x, lead + (params.config.embed_channels,))


def embed_pbuffer(descriptors, params: ManifoldParams) -> Tensor:
    """Sample-mean embedding, (..., H, W, 12); permutation invariant by design."""
    per_sample = embed_samples(descriptors, params)
    return ad.mean(per_sample, axis=-2)


def denoise_column(shot, column, branch, state):
    """Denoise one branch of a shot with one column; returns the
    preprocessed-domain image as an ndarray.

    column: "G" | "P"; branch: "diffuse" | "specular".
    """
    if column not in ("G", "P"):
        raise ValueError(f"unknown column '{column}'")
    if branch not in ("diffuse", "specular"):
        raise ValueError(f"unknown branch '{branch}'")
    models = state.branches[branch]
    if branch == "diffuse":
        noisy = shots.preprocess_diffuse(shot.noisy_diffuse, shot.albedo_diffuse)
        gbuf = shot.gbuffer_diffuse
    else:
        noisy = shots.preprocess_specular(shot.noisy_specular)
        gbuf = shot.gbuffer_specular
    noisy_t = Tensor(noisy.astype(gbuf.dtype))
    if column == "G":
        kmap = predict_kernels(noisy_t, Tensor(gbuf), models.dg)
    else:
        fp = embed_pbuffer(Tensor(shot.descriptors), models.manifold)
        kmap = predict_kernels(noisy_t, fp, models.dp)
    return apply_kernels(noisy_t, kmap).data


@dataclass
class PathLossResult:
    loss: Tensor
    active_pairs: int
    positive_pairs: int
    negative_pairs: int
    warning: bool


def path_disentangle_loss(per_sample_embeddings, reference, rng,
                          tau_pos=0.05, tau_neg=0.2, margin=1.0,
                          num_pairs=128) -> PathLossResult:
    """Contrastive loss over per-sample embeddings.

    Pairs of (pixel, sample) elements are drawn at random; a pair is pulled
    together (cost d^2) when its tone-mapped reference pixels differ by less
    than tau_pos, pushed apart (cost max(0, margin - d)^2) when they differ
    by more than tau_neg, and ignored in the dead zone between. The loss is
    the mean over active pairs; with no active pair it is 0 with a warning.
    """
    if not tau_pos < tau_neg:
        raise ValueError(f"need tau_pos < tau_neg, got {tau_pos} >= {tau_neg}")
    if num_pairs < 1:
        raise ValueError(f"num_pairs must be >= 1, got {num_pairs}")
    emb = ad.as_tensor(per_sample_embeddings)
    if emb.ndim != 4:
        raise ValueError(f"expected (H, W, S, C) embeddings, got shape {emb.shape}")
    h, w, s, c = emb.shape
    total = h * w * s
    dtype = emb.dtype

    def zero(warning):
        return PathLossResult(Tensor(np.zeros((), dtype)), 0, 0, 0, warning)

    if total < 2:
        return zero(True)

    luminance = shots.tone_map(np.asarray(reference)).mean(-1).reshape(-1)
    ia = rng.integers(0, total, num_pairs)
    ib = rng.integers(0, total, num_pairs)
    ib = np.where(ib == ia, (ib + 1) % total, ib)  # never pair an element with itself

    la, lb = luminance[ia // s], luminance[ib // s]
    dref = np.abs(la - lb)
    pos = dref < tau_pos
    neg = dref > tau_neg
    n_active = int(pos.sum() + neg.sum())
    if n_active == 0:
        return zero(True)

    flat = ad.reshape(emb, (total, c))
    ra = ad.take_rows(flat, ia)
    rb = ad.take_rows(flat, ib)
    diff = ad.sub(ra, rb)
    d2 = ad.sum_(ad.mul(diff, diff), axis=1)
    dist = ad.sqrt(ad.add(d2, np.asarray(1e-12, dtype)))
    hinge = ad.relu(ad.sub(np.asarray(margin, dtype), dist))
    terms = ad.add(ad.mul(d2, pos.astype(dtype)),
                   ad.mul(ad.mul(hinge, hinge), neg.astype(dtype)))
    loss = ad.mul(ad.sum_(terms), np.asarray(1.0 / n_active, dtype))
    return PathLossResult(loss, n_active, int(pos.sum()), int(neg.sum()), False)
