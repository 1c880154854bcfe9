"""Layer thickness profiles and band intensity summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import Boundary, BScan, ThicknessProfile


class OrderingError(ValueError):
    pass


@dataclass
class MetricsConfig:
    axial_scale: float | None = None  # micrometres per pixel
    rpe_halfwidth: int = 2

    def __post_init__(self):
        if self.axial_scale is not None and not self.axial_scale > 0:
            raise ValueError("metrics.axial_scale must be positive")
        if self.rpe_halfwidth < 0:
            raise ValueError("metrics.rpe_halfwidth must be >= 0")


def _rows(b) -> np.ndarray:
    return b.row if isinstance(b, Boundary) else np.asarray(b, dtype=np.int64)


def _name(b, default: str) -> str:
    return b.label if isinstance(b, Boundary) else default


def thickness_profile(upper, lower, axial_scale: float | None = None) -> ThicknessProfile:
    """Axial distance lower - upper per column, in pixels."""
    up, lo = _rows(upper), _rows(lower)
    if up.shape != lo.shape:
        raise ValueError("boundaries have different column counts")
    px = lo - up
    if np.any(px < 0):
        c = int(np.argmax(px < 0))
        raise OrderingError(f"upper boundary lies below lower boundary at column {c}")
    return ThicknessProfile(_name(upper, "upper"), _name(lower, "lower"), px, axial_scale)


def band_intensity(img: BScan, upper, lower) -> float:
    """Mean intensity over rows upper..lower (inclusive) of every column."""
    up, lo = _rows(upper), _rows(lower)
    a = img.intensity
    if up.shape != lo.shape or up.size != a.shape[1]:
        raise ValueError("boundary column count does not match the image")
    if np.any(lo < up):
        raise OrderingError("band has negative height")
    up = np.clip(up, 0, a.shape[0] - 1)
    lo = np.clip(lo, 0, a.shape[0] - 1)
    # prefix sums per column make this O(rows * cols) without a Python loop
    csum = np.vstack([np.zeros((1, a.shape[1])), np.cumsum(a, axis=0)])
    cols = np.arange(a.shape[1])
    total = (csum[lo + 1, cols] - csum[up, cols]).sum()
    return float(total / (lo - up + 1).sum())


def compute_metrics(img: BScan, ilm: Boundary, rnfl: Boundary, rpe: Boundary,
                    cfg: MetricsConfig | None = None):
    """Thickness profiles and intensity summaries for one segmented scan.

    Returns ``(metrics, profiles)``: a JSON-ready summary dict and the
    ILM-RNFL, RNFL-RPE and ILM-RPE thickness profiles.
    """
    cfg = cfg or MetricsConfig()
    scale = cfg.axial_scale
    profiles = {
        "ILM-RNFL": thickness_profile(ilm, rnfl, scale),
        "RNFL-RPE": thickness_profile(rnfl, rpe, scale),
        "ILM-RPE": thickness_profile(ilm, rpe, scale),
    }
    last = img.rows - 1
    # a layer occupies the rows strictly below its upper boundary row
    rnfl_top = np.minimum(ilm.row + 1, rnfl.row)
    retina_top = np.minimum(ilm.row + 1, rpe.row)
    h = cfg.rpe_halfwidth
    metrics = {
        "rnfl_thickness": profiles["ILM-RNFL"].summary(),
        "total_retinal_thickness": profiles["ILM-RPE"].summary(),
        "rnfl_mean_intensity": band_intensity(img, rnfl_top, rnfl.row),
        "retina_mean_intensity": band_intensity(img, retina_top, rpe.row),
        "rpe_intensity": band_intensity(
            img, np.clip(rpe.row - h, 0, last), np.clip(rpe.row + h, 0, last)
        ),
    }
    return metrics, profiles
