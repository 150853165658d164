import numpy as np
import pytest

from pixelens import shots


def make_gbuffer(h, w, rng):
    gb = np.zeros((h, w, shots.GBUFFER_CHANNELS), dtype=np.float32)
    gb[..., shots.GB_ALBEDO] = rng.uniform(0.05, 0.95, (h, w, 3))
    gb[..., shots.GB_ALBEDO_DDX] = rng.normal(0, 0.02, (h, w, 3))
    gb[..., shots.GB_ALBEDO_DDY] = rng.normal(0, 0.02, (h, w, 3))
    gb[..., shots.GB_ALBEDO_VAR] = rng.uniform(0, 0.01, (h, w))
    n = rng.normal(size=(h, w, 3))
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    gb[..., shots.GB_NORMAL] = n
    gb[..., shots.GB_NORMAL_DDX] = rng.normal(0, 0.02, (h, w, 3))
    gb[..., shots.GB_NORMAL_DDY] = rng.normal(0, 0.02, (h, w, 3))
    gb[..., shots.GB_NORMAL_VAR] = rng.uniform(0, 0.01, (h, w))
    gb[..., shots.GB_DEPTH] = rng.uniform(0, 1, (h, w))
    gb[..., shots.GB_DEPTH_DDX] = rng.normal(0, 0.02, (h, w))
    gb[..., shots.GB_DEPTH_DDY] = rng.normal(0, 0.02, (h, w))
    gb[..., shots.GB_DEPTH_VAR] = rng.uniform(0, 0.01, (h, w))
    return gb


def make_descriptors(h, w, spp, rng):
    d = np.zeros((h, w, spp, shots.DESCRIPTOR_CHANNELS), dtype=np.float32)
    d[..., shots.DESC_UNDIVIDED] = rng.uniform(0, 2, (h, w, spp, 3))
    d[..., shots.DESC_ENERGY] = rng.uniform(0.5, 2, (h, w, spp, 3))
    d[..., shots.DESC_PDF] = 1.0 - 0.9 * rng.random((h, w, spp))
    d[..., shots.DESC_ATTEN] = rng.uniform(0, 1, (h, w, spp, 18))
    d[..., shots.DESC_TAGS] = rng.integers(0, 5, (h, w, spp, 6))
    d[..., shots.DESC_ROUGH] = rng.uniform(0, 1, (h, w, spp, 5))
    return d


def make_shot(h=6, w=8, spp=3, seed=0, with_reference=True, meta=None):
    rng = np.random.default_rng(seed)
    kwargs = dict(
        width=w, height=h, spp=spp,
        noisy_diffuse=rng.uniform(0, 3, (h, w, 3)).astype(np.float32),
        noisy_specular=rng.uniform(0, 3, (h, w, 3)).astype(np.float32),
        gbuffer_diffuse=make_gbuffer(h, w, rng),
        gbuffer_specular=make_gbuffer(h, w, rng),
        descriptors=make_descriptors(h, w, spp, rng),
        meta=dict(meta or {}),
    )
    if with_reference:
        kwargs["reference_diffuse"] = rng.uniform(0, 3, (h, w, 3)).astype(np.float32)
        kwargs["reference_specular"] = rng.uniform(0, 3, (h, w, 3)).astype(np.float32)
    return shots.Shot(**kwargs)


@pytest.fixture
def small_shot():
    return make_shot()
