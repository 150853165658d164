"""Two-column kernel-predicting denoiser with learned per-pixel ensembling."""

from pixelens.shots import (
    EPS_ALBEDO,
    GBUFFER_CHANNELS,
    DESCRIPTOR_CHANNELS,
    Shot,
    ValidationError,
    LoadError,
    load_shot,
    save_shot,
    validate_shot,
    preprocess_diffuse,
    preprocess_specular,
    postprocess_combine,
    tone_map,
)

__all__ = [
    "EPS_ALBEDO",
    "GBUFFER_CHANNELS",
    "DESCRIPTOR_CHANNELS",
    "Shot",
    "ValidationError",
    "LoadError",
    "load_shot",
    "save_shot",
    "validate_shot",
    "preprocess_diffuse",
    "preprocess_specular",
    "postprocess_combine",
    "tone_map",
]
