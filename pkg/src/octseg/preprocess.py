"""Smoothing, binarization and morphological cleanup feeding the RNFL search.

The cleaned binary image has its top band (the ILM/RNFL complex) deleted;
the first bright pixel left in each column then bounds the RNFL search
region from below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .types import BScan

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class Phase1EmptyError(RuntimeError):
    """No component survives cleaning and top-band removal."""


@dataclass
class PreprocessConfig:
    smooth_kernel: int = 5
    smooth_sigma: float = 1.5
    column_median_window: int = 7
    binarize_method: str = "otsu"
    threshold: float | None = None
    closing_se: int = 2
    min_area_px: int = 500
    # None means "use the image column count"
    band_area_floor: int | None = None
    # rows on either side of the ILM inspected when picking the top band
    ilm_touch_px: int = 3

    def __post_init__(self):
        for name in ("smooth_kernel", "column_median_window"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1 or v % 2 == 0:
                raise ValueError(f"preprocess.{name} must be an odd integer >= 1, got {v!r}")
        if not self.smooth_sigma > 0:
            raise ValueError("preprocess.smooth_sigma must be positive")
        if self.binarize_method not in ("otsu", "fixed"):
            raise ValueError("preprocess.binarize_method must be 'otsu' or 'fixed'")
        if self.threshold is not None and not 0.0 <= self.threshold <= 1.0:
            raise ValueError("preprocess.threshold must lie in [0, 1]")
        if self.binarize_method == "fixed" and self.threshold is None:
            raise ValueError("fixed binarization needs preprocess.threshold")
        if self.closing_se < 1:
            raise ValueError("preprocess.closing_se must be >= 1")
        if self.min_area_px < 1:
            raise ValueError("preprocess.min_area_px must be >= 1")
        if self.band_area_floor is not None and self.band_area_floor < 1:
            raise ValueError("preprocess.band_area_floor must be >= 1")
        if self.ilm_touch_px < 0:
            raise ValueError("preprocess.ilm_touch_px must be >= 0")


@dataclass(frozen=True, eq=False)
class BinaryImage:
    mask: np.ndarray
    threshold: float | None = None
    degenerate: bool = False

    @property
    def shape(self):
        return self.mask.shape


@dataclass(frozen=True, eq=False)
class Phase1Edge:
    """Topmost remaining bright row per column; -1 marks an absent edge."""

    row: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return self.row >= 0

    @property
    def cols(self) -> int:
        return self.row.shape[0]


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def smooth(img: BScan, cfg: PreprocessConfig | None = None) -> BScan:
    """Separable Gaussian filter with replicate borders, clamped to [0, 1]."""
    cfg = cfg or PreprocessConfig()
    k = gaussian_kernel(cfg.smooth_kernel, cfg.smooth_sigma)
    out = ndimage.correlate1d(img.intensity, k, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=1, mode="nearest")
    return img.with_intensity(np.clip(out, 0.0, 1.0))


def column_median(img: BScan, cfg: PreprocessConfig | None = None) -> BScan:
    cfg = cfg or PreprocessConfig()
    w = cfg.column_median_window
    if w > img.rows:
        raise ValueError(f"median window {w} exceeds image height {img.rows}")
    out = ndimage.median_filter(img.intensity, size=(w, 1), mode="nearest")
    return img.with_intensity(out)


def _histogram256(values: np.ndarray) -> np.ndarray:
    bins = np.minimum((np.asarray(values, dtype=np.float64).ravel() * 256).astype(np.int64), 255)
    return np.bincount(np.clip(bins, 0, 255), minlength=256)


def otsu_threshold(values: np.ndarray) -> tuple[float, bool]:
    """Otsu's threshold on a 256-bin histogram of values in [0, 1].

    A cut at bin ``t`` splits bins ``< t`` from bins ``>= t`` and yields the
    threshold ``t / 256``. When several cuts share the maximal between-class
    variance, the middle of the first run of maximizers is used. Returns
    ``(0.5, True)`` when the histogram has fewer than two occupied bins.
    """
    hist = _histogram256(values).astype(np.float64)
    if np.count_nonzero(hist) < 2:
        return 0.5, True
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)[:-1]  # weight below cut t = 1..255
    s0 = np.cumsum(hist * levels)[:-1]
    total, stotal = hist.sum(), (hist * levels).sum()
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = s0 / w0
        mu1 = (stotal - s0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -1.0)
    best = between.max()
    first = int(np.argmax(between == best))
    last = first
    while last + 1 < between.size and between[last + 1] == best:
        last += 1
    t = (first + last) // 2 + 1
    return t / 256.0, False


def binarize(img: BScan, cfg: PreprocessConfig | None = None,
             sample: np.ndarray | None = None) -> BinaryImage:
    """Threshold the scan; ``sample`` restricts the pixels Otsu looks at."""
    cfg = cfg or PreprocessConfig()
    if cfg.binarize_method == "fixed":
        thr, degenerate = float(cfg.threshold), False
    else:
        values = img.intensity if sample is None else img.intensity[sample]
        thr, degenerate = otsu_threshold(values)
    return BinaryImage(img.intensity >= thr, thr, degenerate)


def _shift(mask: np.ndarray, dr: int, dc: int, fill: bool) -> np.ndarray:
    """out[r, c] = mask[r - dr, c - dc], ``fill`` where that falls outside."""
    out = np.full_like(mask, fill)
    rows, cols = mask.shape
    if abs(dr) >= rows or abs(dc) >= cols:
        return out
    src = mask[max(0, -dr) : rows - max(0, dr), max(0, -dc) : cols - max(0, dc)]
    out[max(0, dr) : rows - max(0, -dr), max(0, dc) : cols - max(0, -dc)] = src
    return out


def close(mask: np.ndarray, se_side: int) -> np.ndarray:
    """Binary closing with a se_side x se_side square anchored at its top-left.

    Computed on the image embedded in an all-false plane, so the result is
    extensive and idempotent and never reaches outside the frame.
    """
    if se_side < 1:
        raise ValueError("se_side must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    if se_side == 1:
        return mask.copy()
    p = se_side - 1
    padded = np.pad(mask, p, constant_values=False)
    offsets = [(i, j) for i in range(se_side) for j in range(se_side)]
    dilated = np.zeros_like(padded)
    for i, j in offsets:
        dilated |= _shift(padded, i, j, False)
    # pad cells beyond the dilation's reach stay false, so erosion there is exact
    eroded = np.ones_like(padded)
    for i, j in offsets:
        eroded &= _shift(dilated, -i, -j, False)
    return eroded[p:-p, p:-p]


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    return ndimage.label(mask, structure=EIGHT_CONNECTED)


def remove_small(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Drop 8-connected components with fewer than ``min_area`` pixels."""
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    labels, n = label_components(mask)
    if n == 0:
        return mask.copy()
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_area
    keep[0] = False
    return keep[labels]


def first_bright_rows(mask: np.ndarray) -> np.ndarray:
    """Index of the topmost true pixel per column, -1 where none."""
    has = mask.any(axis=0)
    return np.where(has, np.argmax(mask, axis=0), -1).astype(np.int64)


def top_band_labels(labels: np.ndarray, ilm_rows: np.ndarray | None, touch: int) -> set[int]:
    """Labels of the band to delete.

    Without an ILM this is the component holding the topmost true pixel
    (leftmost on ties). With an ILM it is every component reaching within
    ``touch`` rows of it, so a band split by a thinned fovea is removed whole.
    """
    if ilm_rows is not None:
        rows, cols = labels.shape
        r = np.arange(rows)[:, None]
        near = np.abs(r - np.asarray(ilm_rows)[None, :]) <= touch
        found = set(np.unique(labels[near & (labels > 0)]).tolist())
        if found:
            return found
    fg = labels > 0
    rowmin = np.where(fg.any(axis=1))[0]
    if rowmin.size == 0:
        return set()
    top = rowmin[0]
    col = int(np.argmax(fg[top]))
    return {int(labels[top, col])}


def phase1_pipeline(
    img: BScan,
    cfg: PreprocessConfig | None = None,
    ilm_rows: np.ndarray | None = None,
) -> tuple[BinaryImage, Phase1Edge]:
    """Clean the scan into bright bands, delete the top band, find the edge.

    With ``ilm_rows`` the Otsu threshold only sees pixels below the ILM, so
    a tall vitreous region cannot pull it under the dim retinal layers.
    Raises Phase1EmptyError when nothing is left after the deletion.
    """
    cfg = cfg or PreprocessConfig()
    filtered = column_median(smooth(img, cfg), cfg)
    sample = None
    if ilm_rows is not None:
        sample = np.arange(img.rows)[:, None] > np.asarray(ilm_rows)[None, :]
        if not sample.any():
            sample = None
    binary = binarize(filtered, cfg, sample)
    floor = cfg.band_area_floor if cfg.band_area_floor is not None else img.cols
    mask = close(binary.mask, cfg.closing_se)
    mask = remove_small(mask, cfg.min_area_px)
    mask = close(mask, cfg.closing_se)
    mask = remove_small(mask, floor)

    labels, n = label_components(mask)
    drop = top_band_labels(labels, ilm_rows, cfg.ilm_touch_px) if n else set()
    if drop:
        mask = mask & ~np.isin(labels, list(drop))
    if not mask.any():
        raise Phase1EmptyError("no bright band remains after removing the top band")
    cleaned = BinaryImage(mask, binary.threshold, binary.degenerate)
    return cleaned, Phase1Edge(first_bright_rows(mask))
