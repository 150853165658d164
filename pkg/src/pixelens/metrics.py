"""Image quality metrics and the cross-scene normalization protocol.

All comparisons happen on tone-mapped images. relMSE and SMAPE are plain
per-element means, so stacking two equal-size images averages their scores.
The structural dissimilarity score walks a sliding Gaussian window over the
image; only fully interior windows count.
"""
import dataclasses
import json
from typing import Dict, List, Optional

import numpy as np

from .shots import ValidationError

RELMSE_EPS = 0.01
SMAPE_EPS = 0.01
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0


def _pair(estimate, reference):
    e = np.asarray(estimate, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if e.shape != r.shape:
        raise ValidationError(
            f"metric inputs disagree in shape: {e.shape} vs {r.shape}")
    return e, r


def relmse(estimate, reference, eps=RELMSE_EPS):
    """Mean of (e - r)^2 / (r^2 + eps); weights errors by darkness."""
    e, r = _pair(estimate, reference)
    return float(np.mean((e - r) ** 2 / (r * r + eps)))


def smape(estimate, reference, eps=SMAPE_EPS):
    """Mean of |e - r| / (|e| + |r| + eps); symmetric in its arguments."""
    e, r = _pair(estimate, reference)
    return float(np.mean(np.abs(e - r) / (np.abs(e) + np.abs(r) + eps)))


def l1(estimate, reference):
    e, r = _pair(estimate, reference)
    return float(np.mean(np.abs(e - r)))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Normalized 2-D Gaussian tap grid used for local image statistics."""
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _local_means(img, window):
    # direct correlation over interior windows; no boundary padding
    k = window.shape[0]
    views = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("hwij,ij->hw", views, window)


def _ssim_single(e, r, window):
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    mu_e = _local_means(e, window)
    mu_r = _local_means(r, window)
    var_e = _local_means(e * e, window) - mu_e * mu_e
    var_r = _local_means(r * r, window) - mu_r * mu_r
    cov = _local_means(e * r, window) - mu_e * mu_r
    num = (2.0 * mu_e * mu_r + c1) * (2.0 * cov + c2)
    den = (mu_e ** 2 + mu_r ** 2 + c1) * (var_e + var_r + c2)
    return float(np.mean(num / den))


def dssim(estimate, reference):
    """1 - SSIM, channel-averaged, on tone-mapped [0, 1] inputs."""
    e, r = _pair(estimate, reference)
    if e.ndim == 2:
        e = e[..., None]
        r = r[..., None]
    if e.ndim != 3:
        raise ValidationError(f"expected 2-D or 3-D image, got {e.ndim}-D")
    if e.shape[0] < SSIM_WINDOW or e.shape[1] < SSIM_WINDOW:
        raise ValidationError(
            f"image {e.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    window = gaussian_window()
    scores = [_ssim_single(e[..., c], r[..., c], window)
              for c in range(e.shape[2])]
    return 1.0 - float(np.mean(scores))


def normalized_scene_error(per_scene_errors: Dict[str, float],
                           per_scene_baselines: Dict[str, float]) -> float:
    """Mean over scenes of error / baseline."""
    if set(per_scene_errors) != set(per_scene_baselines):
        raise ValidationError(
            "scene keys disagree: "
            f"{sorted(per_scene_errors)} vs {sorted(per_scene_baselines)}")
    ratios = []
    for scene, err in sorted(per_scene_errors.items()):
        base = per_scene_baselines[scene]
        if base <= 0.0:
            raise ValidationError(f"baseline for scene {scene!r} is not positive")
        ratios.append(err / base)
    return float(np.mean(ratios))


@dataclasses.dataclass
class ShotMetrics:
    """One evaluated shot. `error` marks a shot that could not be scored."""
    shot: str
    scene: str
    relmse: Optional[float] = None
    dssim: Optional[float] = None
    smape: Optional[float] = None
    l1: Optional[float] = None
    error: Optional[str] = None

    def values(self):
        return {"relmse": self.relmse, "dssim": self.dssim,
                "smape": self.smape, "l1": self.l1}


@dataclasses.dataclass
class MetricReport:
    shots: List[ShotMetrics]
    aggregates: Dict[str, float]
    normalized_relmse: Optional[float] = None

    def write(self, path):
        lines = []
        for row in self.shots:
            rec = {"record": "shot", **dataclasses.asdict(row)}
            lines.append(json.dumps(rec))
        lines.append(json.dumps({"record": "aggregate", **self.aggregates}))
        if self.normalized_relmse is not None:
            lines.append(json.dumps({"record": "normalized",
                                     "relmse": self.normalized_relmse}))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path):
        shots, aggregates, normalized = [], {}, None
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                kind = rec.pop("record")
                if kind == "shot":
                    shots.append(ShotMetrics(**rec))
                elif kind == "aggregate":
                    aggregates = rec
                elif kind == "normalized":
                    normalized = rec["relmse"]
        return cls(shots=shots, aggregates=aggregates,
                   normalized_relmse=normalized)


def build_report(rows: List[ShotMetrics],
                 scene_baselines: Optional[Dict[str, float]] = None) -> MetricReport:
    """Aggregate per-shot rows; optionally normalize by per-scene baselines.

    Normalization divides each scene's mean relMSE by that scene's baseline
    error and averages the ratios across scenes. Rows carrying an `error`
    are kept for the record but excluded from every aggregate.
    """
    scored = [r for r in rows if r.error is None]
    for row in scored:
        for key, val in row.values().items():
            if val is None or not np.isfinite(val) or val < 0:
                raise ValidationError(
                    f"shot {row.shot!r}: {key} must be finite and >= 0, got {val}")
    aggregates = {}
    if scored:
        for key in ("relmse", "dssim", "smape", "l1"):
            aggregates[key] = float(np.mean([r.values()[key] for r in scored]))
    normalized = None
    if scene_baselines is not None and scored:
        per_scene: Dict[str, List[float]] = {}
        for row in scored:
            per_scene.setdefault(row.scene, []).append(row.relmse)
        scene_means = {s: float(np.mean(v)) for s, v in per_scene.items()}
        normalized = normalized_scene_error(
            scene_means, {s: scene_baselines[s] for s in scene_means})
    return MetricReport(shots=list(rows), aggregates=aggregates,
                        normalized_relmse=normalized)
