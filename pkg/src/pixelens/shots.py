"""Shot containers: buffer layouts, validation, disk format, radiometric transforms.

A *shot* is one rendered frame's worth of training/inference data: per-branch
noisy radiance, per-branch feature buffers, per-sample path descriptors and
optional references. Arrays are channels-last, float32.

Disk format (shared with the standalone tracer): a directory holding
``manifest.txt`` plus one raw file per field. Raw files are IEEE-754
little-endian, row-major, channels-last, no header. The manifest is plain
text: a kind line, ``meta <key> <value>`` lines, then one
``field <name> <dtype> <shape> <file> <byte-offset>`` line per array.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

EPS_ALBEDO = 0.00316  # demodulation floor, keeps division away from zero

SHOT_KIND = "pixelens-shot v1"

# G-buffer: 10 channels of albedo statistics, 10 of normal, 4 of depth.
GBUFFER_CHANNEL_NAMES = (
    "albedo_r", "albedo_g", "albedo_b",
    "albedo_ddx_r", "albedo_ddx_g", "albedo_ddx_b",
    "albedo_ddy_r", "albedo_ddy_g", "albedo_ddy_b",
    "albedo_var",
    "normal_x", "normal_y", "normal_z",
    "normal_ddx_x", "normal_ddx_y", "normal_ddx_z",
    "normal_ddy_x", "normal_ddy_y", "normal_ddy_z",
    "normal_var",
    "depth",
    "depth_ddx",
    "depth_ddy",
    "depth_var",
)
GBUFFER_CHANNELS = len(GBUFFER_CHANNEL_NAMES)  # 24

GB_ALBEDO = slice(0, 3)
GB_ALBEDO_DDX = slice(3, 6)
GB_ALBEDO_DDY = slice(6, 9)
GB_ALBEDO_VAR = 9
GB_NORMAL = slice(10, 13)
GB_NORMAL_DDX = slice(13, 16)
GB_NORMAL_DDY = slice(16, 19)
GB_NORMAL_VAR = 19
GB_DEPTH = 20
GB_DEPTH_DDX = 21
GB_DEPTH_DDY = 22
GB_DEPTH_VAR = 23

# Path descriptors: per pixel, per sample. A path holds at most MAX_VERTICES
# surface vertices (camera excluded); scattering happens at vertices 1..5,
# the terminal vertex never samples a BSDF, hence 5 roughness slots.
MAX_VERTICES = 6
SCATTER_VERTICES = MAX_VERTICES - 1

DESC_UNDIVIDED = slice(0, 3)      # radiance not divided by the path pdf
DESC_ENERGY = slice(3, 6)         # photon energy of the light the path found
DESC_PDF = 6                      # path sampling probability, > 0
DESC_ATTEN = slice(7, 25)         # 3 x 6, vertex-major rgb attenuation
DESC_TAGS = slice(25, 31)         # interaction tag per vertex, codes below
DESC_ROUGH = slice(31, 36)        # sampled-lobe roughness, vertices 1..5
DESCRIPTOR_CHANNELS = 36

TAG_NONE = 0
TAG_DIFFUSE = 1
TAG_GLOSSY = 2
TAG_SPEC_REFLECT = 3
TAG_SPEC_TRANSMIT = 4
TAG_CODES = (TAG_NONE, TAG_DIFFUSE, TAG_GLOSSY, TAG_SPEC_REFLECT, TAG_SPEC_TRANSMIT)

DESCRIPTOR_CHANNEL_NAMES = (
    "undivided_r", "undivided_g", "undivided_b",
    "energy_r", "energy_g", "energy_b",
    "pdf",
    *(f"atten_v{v}_{c}" for v in range(1, 7) for c in "rgb"),
    *(f"tag_v{v}" for v in range(1, 7)),
    *(f"rough_v{v}" for v in range(1, 6)),
)
assert len(DESCRIPTOR_CHANNEL_NAMES) == DESCRIPTOR_CHANNELS


class ValidationError(ValueError):
    """A shot or array violates a structural or range invariant."""


class LoadError(RuntimeError):
    """A container on disk is missing, truncated or malformed."""


@dataclass(frozen=True)
class Shot:
    """One frame of data. Arrays are float32, channels-last, read-only."""

    width: int
    height: int
    spp: int
    noisy_diffuse: np.ndarray       # (H, W, 3)
    noisy_specular: np.ndarray      # (H, W, 3)
    gbuffer_diffuse: np.ndarray     # (H, W, 24)
    gbuffer_specular: np.ndarray    # (H, W, 24)
    descriptors: np.ndarray         # (H, W, spp, 36)
    reference_diffuse: np.ndarray | None = None   # (H, W, 3)
    reference_specular: np.ndarray | None = None  # (H, W, 3)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in self._arrays().values():
            arr.flags.writeable = False

    def _arrays(self):
        out = {
            "noisy_diffuse": self.noisy_diffuse,
            "noisy_specular": self.noisy_specular,
            "gbuffer_diffuse": self.gbuffer_diffuse,
            "gbuffer_specular": self.gbuffer_specular,
            "descriptors": self.descriptors,
        }
        if self.reference_diffuse is not None:
            out["reference_diffuse"] = self.reference_diffuse
        if self.reference_specular is not None:
            out["reference_specular"] = self.reference_specular
        return out

    @property
    def albedo_diffuse(self):
        return self.gbuffer_diffuse[..., GB_ALBEDO]

    @property
    def albedo_specular(self):
        return self.gbuffer_specular[..., GB_ALBEDO]

    def reference_total(self):
        if self.reference_diffuse is None or self.reference_specular is None:
            return None
        return self.reference_diffuse + self.reference_specular


def _check_radiance(name, arr, h, w):
    if arr.shape != (h, w, 3):
        raise ValidationError(f"{name}: expected shape {(h, w, 3)}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name}: non-finite values")
    if (arr < 0).any():
        raise ValidationError(f"{name}: negative radiance")


def _check_gbuffer(name, gb, h, w):
    if gb.shape != (h, w, GBUFFER_CHANNELS):
        raise ValidationError(
            f"{name}: expected shape {(h, w, GBUFFER_CHANNELS)}, got {gb.shape}")
    if not np.isfinite(gb).all():
        raise ValidationError(f"{name}: non-finite values")
    for ch, label in ((GB_ALBEDO_VAR, "albedo_var"), (GB_NORMAL_VAR, "normal_var"),
                      (GB_DEPTH_VAR, "depth_var")):
        if (gb[..., ch] < 0).any():
            raise ValidationError(f"{name}: negative variance channel {label}")
    mag = np.linalg.norm(gb[..., GB_NORMAL], axis=-1)
    if (mag > 1.0 + 1e-4).any():
        raise ValidationError(f"{name}: normal magnitude exceeds 1")
    depth = gb[..., GB_DEPTH]
    if (depth < 0).any() or (depth > 1).any():
        raise ValidationError(f"{name}: depth outside [0, 1]")


def _check_descriptors(desc, h, w, spp):
    if desc.shape != (h, w, spp, DESCRIPTOR_CHANNELS):
        raise ValidationError(
            f"descriptors: expected shape {(h, w, spp, DESCRIPTOR_CHANNELS)}, "
            f"got {desc.shape}")
    if not np.isfinite(desc).all():
        raise ValidationError("descriptors: non-finite values")
    if (desc[..., DESC_PDF] <= 0).any():
        raise ValidationError("descriptors: pdf must be positive")
    if (desc[..., DESC_UNDIVIDED] < 0).any():
        raise ValidationError("descriptors: negative undivided radiance")
    if (desc[..., DESC_ATTEN] < 0).any():
        raise ValidationError("descriptors: negative attenuation")
    tags = desc[..., DESC_TAGS]
    if not np.isin(tags, TAG_CODES).all() or (tags != np.round(tags)).any():
        raise ValidationError("descriptors: tag outside the fixed code set")
    rough = desc[..., DESC_ROUGH]
    if (rough < 0).any() or (rough > 1).any():
        raise ValidationError("descriptors: roughness outside [0, 1]")


def validate_shot(shot: Shot):
    """Raise ValidationError if any structural or range invariant is broken."""
    h, w = shot.height, shot.width
    if h <= 0 or w <= 0:
        raise ValidationError(f"bad shot size {w}x{h}")
    if shot.spp < 1:
        raise ValidationError(f"spp must be >= 1, got {shot.spp}")
    for name in ("noisy_diffuse", "noisy_specular"):
        _check_radiance(name, getattr(shot, name), h, w)
    for name in ("reference_diffuse", "reference_specular"):
        arr = getattr(shot, name)
        if arr is not None:
            _check_radiance(name, arr, h, w)
    _check_gbuffer("gbuffer_diffuse", shot.gbuffer_diffuse, h, w)
    _check_gbuffer("gbuffer_specular", shot.gbuffer_specular, h, w)
    _check_descriptors(shot.descriptors, h, w, shot.spp)
    for arr in shot._arrays().values():
        if arr.dtype != np.float32:
            raise ValidationError(f"arrays must be float32, got {arr.dtype}")


# ---------------------------------------------------------------------------
# Generic container I/O (also used for checkpoints).

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}
_DTYPE_NAMES = {np.dtype("<f4"): "float32", np.dtype("<f8"): "float64",
                np.dtype("<i8"): "int64"}


def _format_meta(value):
    if isinstance(value, float):
        return repr(value)  # shortest round-trip decimal
    return str(value)


def _parse_meta(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def write_container(path, arrays, meta, kind, pack=False):
    """Write named arrays plus metadata under `path`.

    pack=False stores one ``<name>.raw`` per array (field names must be
    filesystem-safe); pack=True concatenates everything into ``arrays.raw``
    with per-field byte offsets, for containers with many small arrays.
    """
    os.makedirs(path, exist_ok=True)
    lines = [kind]
    for key in meta:
        lines.append(f"meta {key} {_format_meta(meta[key])}")
    if pack:
        blob = bytearray()
        for name, arr in arrays.items():
            dt = _DTYPE_NAMES[arr.dtype.newbyteorder("<")]
            shape = ",".join(str(s) for s in arr.shape) if arr.ndim else "scalar"
            lines.append(f"field {name} {dt} {shape} arrays.raw {len(blob)}")
            blob += np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
        with open(os.path.join(path, "arrays.raw"), "wb") as f:
            f.write(bytes(blob))
    else:
        for name, arr in arrays.items():
            dt = _DTYPE_NAMES[arr.dtype.newbyteorder("<")]
            shape = ",".join(str(s) for s in arr.shape) if arr.ndim else "scalar"
            fname = f"{name}.raw"
            lines.append(f"field {name} {dt} {shape} {fname} 0")
            with open(os.path.join(path, fname), "wb") as f:
                f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    with open(os.path.join(path, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def read_container(path, kind):
    """Read back a container written by write_container. Returns (arrays, meta)."""
    manifest = os.path.join(path, "manifest.txt")
    if not os.path.isfile(manifest):
        raise LoadError(f"{path}: no manifest.txt")
    with open(manifest) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines or lines[0] != kind:
        found = lines[0] if lines else "<empty>"
        raise LoadError(f"{path}: expected kind '{kind}', found '{found}'")
    meta = {}
    arrays = {}
    for ln in lines[1:]:
        parts = ln.split(" ")
        if parts[0] == "meta":
            if len(parts) < 3:
                raise LoadError(f"{path}: malformed meta line '{ln}'")
            meta[parts[1]] = _parse_meta(" ".join(parts[2:]))
        elif parts[0] == "field":
            if len(parts) != 6:
                raise LoadError(f"{path}: malformed field line '{ln}'")
            name, dt, shape_s, fname, offset_s = parts[1:]
            if dt not in _DTYPES:
                raise LoadError(f"{path}: field {name}: unknown dtype '{dt}'")
            shape = () if shape_s == "scalar" else tuple(int(s) for s in shape_s.split(","))
            count = int(np.prod(shape)) if shape else 1
            fpath = os.path.join(path, fname)
            if not os.path.isfile(fpath):
                raise LoadError(f"{path}: field {name}: missing file {fname}")
            offset = int(offset_s)
            itemsize = np.dtype(_DTYPES[dt]).itemsize
            if os.path.getsize(fpath) < offset + count * itemsize:
                raise LoadError(
                    f"{path}: field {name}: {fname} truncated "
                    f"(need {offset + count * itemsize} bytes, "
                    f"have {os.path.getsize(fpath)})")
            with open(fpath, "rb") as f:
                f.seek(offset)
                data = np.frombuffer(f.read(count * itemsize), dtype=_DTYPES[dt])
            arrays[name] = data.reshape(shape).copy()
        else:
            raise LoadError(f"{path}: unrecognized manifest line '{ln}'")
    return arrays, meta


def save_shot(path, shot: Shot):
    """Validate and write a shot container. Refuses to write invalid data."""
    validate_shot(shot)
    meta = {"width": shot.width, "height": shot.height, "spp": shot.spp}
    meta.update(shot.meta)
    write_container(path, shot._arrays(), meta, SHOT_KIND)


def load_shot(path) -> Shot:
    """Read a shot container; structural problems raise LoadError or ValidationError."""
    arrays, meta = read_container(path, SHOT_KIND)
    for key in ("width", "height", "spp"):
        if key not in meta:
            raise LoadError(f"{path}: manifest missing meta '{key}'")
    required = ("noisy_diffuse", "noisy_specular", "gbuffer_diffuse",
                "gbuffer_specular", "descriptors")
    for name in required:
        if name not in arrays:
            raise LoadError(f"{path}: manifest missing field '{name}'")
    width, height, spp = meta.pop("width"), meta.pop("height"), meta.pop("spp")
    shot = Shot(
        width=width, height=height, spp=spp,
        noisy_diffuse=arrays["noisy_diffuse"],
        noisy_specular=arrays["noisy_specular"],
        gbuffer_diffuse=arrays["gbuffer_diffuse"],
        gbuffer_specular=arrays["gbuffer_specular"],
        descriptors=arrays["descriptors"],
        reference_diffuse=arrays.get("reference_diffuse"),
        reference_specular=arrays.get("reference_specular"),
        meta=meta,
    )
    validate_shot(shot)
    return shot


# ---------------------------------------------------------------------------
# Radiometric transforms. Numpy reference versions; the training graph
# mirrors them with differentiable ops and is tested against these.

def preprocess_diffuse(noisy_diffuse, albedo, eps=EPS_ALBEDO):
    """Demodulate diffuse radiance by albedo: x / (albedo + eps)."""
    return noisy_diffuse / (albedo + eps)


def preprocess_specular(noisy_specular):
    """Compress specular radiance: log(1 + x)."""
    return np.log1p(noisy_specular)


def postprocess_combine(diffuse_pre, specular_pre, albedo, eps=EPS_ALBEDO):
    """Invert both preprocessors and sum: (albedo+eps)*d + (exp(s)-1), clamped at 0."""
    out = (albedo + eps) * diffuse_pre + np.expm1(specular_pre)
    return np.maximum(out, 0.0)


def tone_map(hdr):
    """Display transform: clamp negatives, gamma 1/2.2, clamp to [0, 1]."""
    hdr = np.asarray(hdr)
    if not np.isfinite(hdr).all():
        raise ValidationError("tone_map: non-finite input")
    return np.clip(np.maximum(hdr, 0.0) ** (1.0 / 2.2), 0.0, 1.0)
