"""Per-pixel convex blending of the two column outputs.

A small conv net looks at both denoised images plus their auxiliary
features and emits two logits per pixel; a softmax turns them into weight
maps W_G, W_P that sum to one. The column outputs feeding the weight
predictor are gradient-stopped, so the blend weights never backpropagate
into the columns through the prediction path; the combination itself uses
the live column outputs, which is what routes each pixel's error to the
column that owns it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pixelens import autodiff as ad
from pixelens.autodiff import Parameter, Tensor
from pixelens.optim import xavier_init


@dataclass(frozen=True)
class EnsemblerConfig:
    in_channels: int = 42      # 3 + 3 radiance, 24 geometry, 12 path embedding
    layers: int = 8            # hidden convs, each followed by ReLU
    base_width: int = 50
    width_scale: float = 1.0
    conv_kernel: int = 5

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.width_scale <= 0:
            raise ValueError(f"width_scale must be > 0, got {self.width_scale}")

    @property
    def width(self):
        return max(4, round(self.base_width * self.width_scale))

    def layer_shapes(self):
        k, w = self.conv_kernel, self.width
        dims = [self.in_channels] + [w] * self.layers + [2]
        return [(k, k, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def param_count(self):
        return sum(int(np.prod(s)) + s[-1] for s in self.layer_shapes())


@dataclass
class EnsemblerParams:
    config: EnsemblerConfig
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_ensembler(config: EnsemblerConfig, seed, dtype=np.float32) -> EnsemblerParams:
    base = list(np.atleast_1d(seed))
    params = EnsemblerParams(config)
    for i, shape in enumerate(config.layer_shapes()):
        params.weights.append(Parameter(xavier_init(shape, base + [i], dtype)))
        params.biases.append(Parameter(np.zeros(shape[-1], dtype)))
    return params


@dataclass
class WeightMaps:
    """Single-channel convex blend maps; wg + wp = 1 per pixel."""

    wg: Tensor  # (..., H, W, 1)
    wp: Tensor

    def validate(self, atol=1e-6):
        g, p = self.wg.data, self.wp.data
        if g.shape != p.shape:
            raise ValueError(f"weight maps disagree: {g.shape} vs {p.shape}")
        if (g < -atol).any() or (g > 1 + atol).any():
            raise ValueError("W_G outside [0, 1]")
        if np.abs(g + p - 1.0).max() > atol:
            raise ValueError(
                f"weights must sum to 1, worst |sum-1| = {np.abs(g + p - 1).max():.3g}")


def predict_weights(ig, ip, fg, fp, params: EnsemblerParams) -> WeightMaps:
    """Predict the blend maps from gradient-stopped column outputs and features.

    ig, ip: (..., H, W, 3) column outputs (detached here, never upstream);
    fg: (..., H, W, 24) geometry features; fp: (..., H, W, 12) path embedding.
    """
    cfg = params.config
    ig, ip = ad.stop_gradient(ig), ad.stop_gradient(ip)
    fg, fp = ad.as_tensor(fg), ad.as_tensor(fp)
    got = ig.shape[-1] + ip.shape[-1] + fg.shape[-1] + fp.shape[-1]
    if got != cfg.in_channels:
        raise ValueError(f"ensembler expects {cfg.in_channels} input channels, got {got}")
    x = ad.concat([ig, ip, fg, fp], axis=-1)
    for i in range(cfg.layers):
        x = ad.relu(ad.conv2d(x, params.weights[i], params.biases[i]))
    logits = ad.conv2d(x, params.weights[-1], params.biases[-1])
    soft = ad.softmax_channels(logits)
    return WeightMaps(wg=ad.narrow(soft, -1, 0, 1), wp=ad.narrow(soft, -1, 1, 1))


def combine(ig, ip, weights: WeightMaps) -> Tensor:
    """Blend the live column outputs: I_E = W_G * I_G + W_P * I_P."""
    weights.validate()
    ig, ip = ad.as_tensor(ig), ad.as_tensor(ip)
    return ad.add(ad.mul(ig, weights.wg), ad.mul(ip, weights.wp))


def weights_to_png(wmap, path):
    """Write a weight map (values in [0, 1]) as an 8-bit grayscale PNG."""
    from PIL import Image

    data = np.asarray(wmap)
    if data.ndim == 3:
        data = data[..., 0]
    img = np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)
