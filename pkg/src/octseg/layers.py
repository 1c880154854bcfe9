"""Full ILM / RNFL / RPE segmentation of one B-scan.

Order of work: approximate the RPE from the brightest pixel per column,
trace RPE and ILM on the dark-to-light field, flatten the scan on the RPE,
build the RNFL search region from the cleaned binary image (with the fovea
rule for jumps in the middle third), trace the RNFL on the light-to-dark
field, then test intervals of the RNFL against the ILM band intensity and
pull the search region up where the boundary sits over bright tissue.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import preprocess
from .graph_search import (
    DisconnectedRoiError,
    GradientField,
    GraphConfig,
    shortest_boundary,
    vertical_gradients,
)
from .metrics import MetricsConfig, compute_metrics
from .preprocess import Phase1Edge, Phase1EmptyError, PreprocessConfig
from .types import Boundary, BScan, SegmentationResult

log = logging.getLogger(__name__)

LEFT, MIDDLE, RIGHT = "left", "middle", "right"


class OrderingViolationError(RuntimeError):
    pass


@dataclass
class LayersConfig:
    rpe_band_halfwidth: int = 20
    ilm_clearance: int = 10
    rpe_median_window: int = 15
    edge_margin: int = 2
    gap_threshold: int = 3
    # image the gradient fields are computed from: "raw" or "smoothed"
    gradient_source: str = "raw"

    def __post_init__(self):
        if self.rpe_band_halfwidth < 0 or self.ilm_clearance < 0 or self.edge_margin < 0:
            raise ValueError("layers margins must be >= 0")
        if self.rpe_median_window < 1 or self.rpe_median_window % 2 == 0:
            raise ValueError("layers.rpe_median_window must be an odd integer >= 1")
        if self.gap_threshold < 0:
            raise ValueError("layers.gap_threshold must be >= 0")
        if self.gradient_source not in ("raw", "smoothed"):
            raise ValueError("layers.gradient_source must be 'raw' or 'smoothed'")


@dataclass
class Phase2Config:
    enabled: bool = True
    k: float = 0.9
    depth_px: int = 5
    low_fraction: float = 0.60
    shift_px: int = 3
    rank_lo: float = 0.7
    rank_hi: float = 0.9
    max_iterations: int = 10
    extra_probe: bool = True
    # "literal": sample below the boundary, fire when too few columns are dark.
    # "inverted": sample the band above it, fire when most columns are dark.
    polarity: str = "literal"

    def __post_init__(self):
        if not 0 < self.k <= 1:
            raise ValueError("phase2.k must lie in (0, 1]")
        if self.depth_px < 1 or self.shift_px < 1:
            raise ValueError("phase2.depth_px and phase2.shift_px must be >= 1")
        if not 0 <= self.low_fraction <= 1:
            raise ValueError("phase2.low_fraction must lie in [0, 1]")
        if not 0 <= self.rank_lo < self.rank_hi <= 1:
            raise ValueError("phase2 ranks need 0 <= rank_lo < rank_hi <= 1")
        if self.max_iterations < 1:
            raise ValueError("phase2.max_iterations must be >= 1")
        if self.polarity not in ("literal", "inverted"):
            raise ValueError("phase2.polarity must be 'literal' or 'inverted'")


@dataclass
class SegmentConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    layers: LayersConfig = field(default_factory=LayersConfig)
    phase2: Phase2Config = field(default_factory=Phase2Config)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)


@dataclass(frozen=True)
class Discontinuity:
    column: int
    gap_px: int
    section: str


def section_bounds(cols: int) -> tuple[int, int]:
    """First column of the middle and of the right third."""
    return math.ceil(cols / 3), math.ceil(2 * cols / 3)


def section_of(column: int, cols: int) -> str:
    mid, right = section_bounds(cols)
    if column < mid:
        return LEFT
    return MIDDLE if column < right else RIGHT


# --------------------------------------------------------------------------
# ILM and RPE


def approximate_rpe(img: BScan, window: int = 15) -> Boundary:
    """Brightest row per column, median-filtered across columns."""
    peak = np.argmax(img.intensity, axis=0)
    w = min(window, img.cols if img.cols % 2 else img.cols - 1)
    if w > 1:
        peak = ndimage.median_filter(peak, size=w, mode="nearest")
    return Boundary("RAW", peak)


def _band_mask(center: np.ndarray, halfwidth: int, rows: int) -> np.ndarray:
    r = np.arange(rows)[:, None]
    return np.abs(r - center[None, :]) <= halfwidth


def segment_ilm_rpe(
    img: BScan,
    cfg: SegmentConfig | None = None,
    field: GradientField | None = None,
    rpe_guide: Boundary | None = None,
) -> tuple[Boundary, Boundary]:
    """Trace the RPE inside a band around its approximation, then the ILM above it."""
    cfg = cfg or SegmentConfig()
    lc = cfg.layers
    if field is None:
        field = vertical_gradients(img)[0]
    if rpe_guide is None:
        rpe_guide = approximate_rpe(img, lc.rpe_median_window)
    rows = img.rows
    band = _band_mask(rpe_guide.row, lc.rpe_band_halfwidth, rows)
    band[0] = False  # leave the ILM at least one row above the RPE
    band[1, ~band.any(axis=0)] = True
    rpe = shortest_boundary(field, band, cfg.graph, "RPE")
    limit = np.maximum(rpe.row - lc.ilm_clearance, 1)
    ilm_roi = np.arange(rows)[:, None] < limit[None, :]
    ilm = shortest_boundary(field, ilm_roi, cfg.graph, "ILM")
    if np.any(ilm.row >= rpe.row):
        raise OrderingViolationError("ILM crosses the RPE")
    return ilm, rpe


# --------------------------------------------------------------------------
# flattening


def flatten(img: BScan, rpe: Boundary) -> tuple[BScan, np.ndarray]:
    """Shift each column so the RPE sits on its (lower) median row."""
    rows = img.rows
    if rpe.cols != img.cols or rpe.row.min() < 0 or rpe.row.max() >= rows:
        raise ValueError("RPE boundary does not fit the image")
    target = int(np.sort(rpe.row)[(rpe.cols - 1) // 2])
    shifts = target - rpe.row
    return img.with_intensity(shift_columns(img.intensity, shifts)), shifts


def shift_columns(a: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """out[r, c] = a[r - shifts[c], c], replicating each column's end values."""
    rows = a.shape[0]
    idx = np.clip(np.arange(rows)[:, None] - shifts[None, :], 0, rows - 1)
    return np.take_along_axis(a, idx, axis=0)


def unflatten_boundary(b: Boundary, shifts: np.ndarray, rows: int) -> tuple[Boundary, bool]:
    """Undo :func:`flatten` on a boundary; reports whether clamping was needed."""
    if b.cols != len(shifts):
        raise ValueError("shift count does not match boundary width")
    raw = b.row - np.asarray(shifts)
    out = np.clip(raw, 0, rows - 1)
    return Boundary(b.label, out, b.cost), bool(np.any(out != raw))


# --------------------------------------------------------------------------
# RNFL search region


def detect_discontinuities(edge: Phase1Edge, gap_threshold: int = 3, rows: int | None = None) -> list[Discontinuity]:
    """Jumps larger than ``gap_threshold`` between neighbouring edge columns.

    An absent edge counts as lying on row ``rows`` (below the image), so the
    borders of absent runs register whenever the present side is high enough.
    """
    present = edge.present
    if rows is None:
        rows = int(edge.row.max()) + 1 if present.any() else 0
    depth = np.where(present, edge.row, rows)
    cols = edge.cols
    out = []
    for c in range(cols - 1):
        if not present[c] and not present[c + 1]:
            continue
        gap = int(abs(depth[c + 1] - depth[c]))
        if gap > gap_threshold:
            out.append(Discontinuity(c, gap, section_of(c, cols)))
    return out


@dataclass
class RnflRoi:
    mask: np.ndarray
    top: np.ndarray
    lower: np.ndarray
    fovea_copy: bool = False


def _fovea_span(middle: list[Discontinuity], edge_depth: np.ndarray, cols: int):
    mid, right = section_bounds(cols)
    if len(middle) >= 2:
        a, b = middle[0], middle[-1]
        offset = math.ceil((a.gap_px + b.gap_px) / 4)
        return a.column + 1, b.column + 1, offset
    (d,) = middle
    offset = math.ceil(d.gap_px / 2)
    if edge_depth[d.column + 1] > edge_depth[d.column]:
        return d.column + 1, right, offset
    return mid, d.column + 1, offset


def rnfl_roi(
    ilm: Boundary | np.ndarray,
    edge: Phase1Edge,
    discontinuities: list[Discontinuity],
    shape: tuple[int, int],
    margin: int = 2,
    floor_limit: np.ndarray | None = None,
) -> RnflRoi:
    """Admissible RNFL rows: below the ILM, ``margin`` rows above the edge.

    Between the outermost middle-third discontinuities the lower bound is an
    ILM copy moved down by half the mean jump; columns without an edge use
    an ILM copy moved down by the median ILM-to-bound distance. ``floor_limit`` caps the lower bound strictly
    above the given rows.
    """
    rows, cols = shape
    ilm_rows = ilm.row if isinstance(ilm, Boundary) else np.asarray(ilm, dtype=np.int64)
    top = np.minimum(ilm_rows + 1, rows - 1)
    present = edge.present
    lower = np.where(present, edge.row - margin, 0)
    if present.any():
        median_offset = max(1, math.ceil(float(np.median(lower[present] - ilm_rows[present]))))
    else:
        median_offset = max(1, rows // 8)

    middle = [d for d in discontinuities if d.section == MIDDLE]
    fovea = False
    if middle:
        depth = np.where(present, edge.row, rows)
        start, stop, offset = _fovea_span(middle, depth, cols)
        lower[start:stop] = ilm_rows[start:stop] + max(1, offset)
        fovea = stop > start
    # columns without an edge always take the median-offset copy
    lower = np.where(present, lower, ilm_rows + median_offset)
    if floor_limit is not None:
        lower = np.minimum(lower, np.asarray(floor_limit) - 1)
    lower = np.clip(np.maximum(lower, top), 0, rows - 1)
    r = np.arange(rows)[:, None]
    mask = (r >= top[None, :]) & (r <= lower[None, :])
    return RnflRoi(mask, top, lower, fovea)


# --------------------------------------------------------------------------
# intensity correction


def _column_band_means(a: np.ndarray, start: np.ndarray, depth: int) -> np.ndarray:
    """Mean of rows start..start+depth-1 per column (clipped); NaN if empty."""
    rows = a.shape[0]
    lo = np.clip(start, 0, rows)
    hi = np.clip(start + depth, 0, rows)
    csum = np.vstack([np.zeros((1, a.shape[1])), np.cumsum(a, axis=0)])
    cols = np.arange(a.shape[1])
    n = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, (csum[hi, cols] - csum[lo, cols]) / np.maximum(n, 1), np.nan)


def ilm_intensity_estimate(img: BScan, ilm: Boundary | np.ndarray, cfg: Phase2Config | None = None) -> float:
    """Reference brightness of the layer under the ILM.

    Column means over ``depth_px`` rows below the ILM are sorted and the
    entries ranked in [rank_lo, rank_hi) of the vector are averaged, which
    skips the brightest outliers.
    """
    cfg = cfg or Phase2Config()
    rows = ilm.row if isinstance(ilm, Boundary) else np.asarray(ilm, dtype=np.int64)
    means = _column_band_means(img.intensity, rows + 1, cfg.depth_px)
    means = np.sort(means[np.isfinite(means)])
    n = means.size
    if n == 0:
        raise ValueError("no column has pixels below the ILM")
    lo = math.ceil(cfg.rank_lo * n - 1e-9)
    hi = math.ceil(cfg.rank_hi * n - 1e-9)
    if hi <= lo:
        lo, hi = min(lo, n - 1), min(lo, n - 1) + 1
    return float(means[lo:hi].mean())


def dark_fraction(img: BScan, rows: np.ndarray, start: int, threshold: float, depth: int,
                  side: str = "below") -> float:
    """Fraction of columns whose band mean next to the boundary is < threshold."""
    a = img.intensity[:, start : start + len(rows)]
    first = rows + 1 if side == "below" else rows - depth + 1
    means = _column_band_means(a, first, depth)
    valid = np.isfinite(means)
    if not valid.any():
        return 1.0 if side == "below" else 0.0
    return float(np.mean(means[valid] < threshold))


def correction_intervals(disc: list[Discontinuity], cols: int, extra_probe: bool):
    """(start, stop, source) column intervals examined by the correction."""
    mid, right = section_bounds(cols)
    out = []
    for sec, lo, hi in ((LEFT, 0, mid), (RIGHT, right, cols)):
        cuts = sorted(d.column + 1 for d in disc if d.section == sec)
        if not cuts or hi <= lo:
            continue
        bounds = [lo] + [c for c in cuts if lo < c < hi] + [hi]
        out += [(a, b, "discontinuity") for a, b in zip(bounds, bounds[1:]) if b > a]
    if extra_probe:
        width = max(1, cols // 8)
        for lo, hi in ((0, mid), (right, cols)):
            out += [(a, min(a + width, hi), "probe") for a in range(lo, hi, width)]
    return out


def path_cost(g: np.ndarray, rows: np.ndarray, cfg: GraphConfig) -> float:
    cols = np.arange(len(rows))
    vals = g[rows, cols]
    cost = cfg.w_min
    for w in (2.0 - (vals[:-1] + vals[1:])) + cfg.w_min:
        cost += w
    return float(cost + cfg.w_min)


def _rerun_interval(g, roi, row, a, b, graph_cfg, offsets):
    """Re-trace columns [a, b) and splice the result into ``row``.

    The window grows outwards until its ends can join the untouched
    boundary within the step bound.
    """
    rows, cols = roi.shape
    m = graph_cfg.max_vertical_step
    r = np.arange(rows)
    pad = 0
    while True:
        lo, hi = max(0, a - pad), min(cols, b + pad)
        adm = roi[:, lo:hi].copy()
        if lo > 0:
            adm[:, 0] &= np.abs(r - row[lo - 1] - offsets[lo - 1]) <= m
        if hi < cols:
            adm[:, -1] &= np.abs(row[hi] - r - offsets[hi - 1]) <= m
        try:
            sub = shortest_boundary(g[:, lo:hi], adm, graph_cfg, column_offsets=offsets[lo : hi - 1])
        except DisconnectedRoiError:
            if lo == 0 and hi == cols:
                raise
            pad = max(1, 2 * pad)
            continue
        row[lo:hi] = sub.row
        return lo, hi


def _merge_spans(spans):
    out: list[list[int]] = []
    for lo, hi in sorted(spans):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return out


def phase2_correct(
    img: BScan,
    rnfl: Boundary,
    roi: np.ndarray,
    discontinuities: list[Discontinuity],
    i_hat: float,
    cfg: Phase2Config | None = None,
    field: GradientField | None = None,
    graph_cfg: GraphConfig | None = None,
    column_offsets: np.ndarray | None = None,
) -> tuple[Boundary, list[dict], list[str]]:
    """Intensity test per interval; raise the region's floor where it fails.

    ``roi`` must hold one contiguous run of admissible rows per column (as
    built by :func:`rnfl_roi`). Returns the corrected boundary, the log of
    applied shifts and any flags. When no interval fails, the input
    boundary object is returned untouched. ``column_offsets`` is passed on
    to :func:`shortest_boundary` for the re-traced pieces.
    """
    cfg = cfg or Phase2Config()
    graph_cfg = graph_cfg or GraphConfig()
    if field is None:
        field = vertical_gradients(img)[1]
    g = field.g
    roi = np.asarray(roi, dtype=bool).copy()
    rows, cols = roi.shape
    if column_offsets is None:
        column_offsets = np.zeros(max(cols - 1, 0), dtype=np.int64)
    top = np.argmax(roi, axis=0)
    floor = rows - 1 - np.argmax(roi[::-1], axis=0)
    threshold = cfg.k * i_hat
    side = "below" if cfg.polarity == "literal" else "above"

    def passes(frac: float) -> bool:
        if cfg.polarity == "literal":
            return frac >= cfg.low_fraction
        return frac < cfg.low_fraction

    row = rnfl.row.copy()
    corrections: list[dict] = []
    flags: list[str] = []
    for a, b, source in correction_intervals(discontinuities, cols, cfg.extra_probe):
        for it in range(cfg.max_iterations + 1):
            frac = dark_fraction(img, row[a:b], a, threshold, cfg.depth_px, side)
            if passes(frac):
                break
            if it == cfg.max_iterations:
                flags.append("phase2_iteration_cap")
                break
            new_floor = np.maximum(np.minimum(floor[a:b], row[a:b]) - cfg.shift_px, top[a:b])
            if np.array_equal(new_floor, floor[a:b]) and np.all(row[a:b] <= new_floor):
                flags.append("phase2_floor_exhausted")
                break
            floor[a:b] = new_floor
            roi[:, a:b] = (np.arange(rows)[:, None] >= top[None, a:b]) & (
                np.arange(rows)[:, None] <= new_floor[None, :]
            )
            lo, hi = _rerun_interval(g, roi, row, a, b, graph_cfg, column_offsets)
            corrections.append(
                {
                    "interval": [int(a), int(b)],
                    "source": source,
                    "iteration": it + 1,
                    "dark_fraction": frac,
                    "shift_px": cfg.shift_px,
                    "rerun_columns": [int(lo), int(hi)],
                }
            )
    if not corrections:
        return rnfl, corrections, sorted(set(flags))
    # intervals were fixed one after another, so a piece stitched to a
    # neighbour that was corrected later may still bend towards the old
    # path; re-trace every merged span of touched columns once more
    for lo, hi in _merge_spans([c["rerun_columns"] for c in corrections]):
        _rerun_interval(g, roi, row, lo, hi, graph_cfg, column_offsets)
    return Boundary(rnfl.label, row, path_cost(g, row, graph_cfg)), corrections, sorted(set(flags))


# --------------------------------------------------------------------------
# orchestration


def segment_all(img: BScan, cfg: SegmentConfig | None = None) -> SegmentationResult:
    cfg = cfg or SegmentConfig()
    img.validate()
    lc = cfg.layers
    flags: list[str] = []

    smoothed = preprocess.smooth(img, cfg.preprocess)
    grad_src = img if lc.gradient_source == "raw" else smoothed
    dark_to_light, _ = vertical_gradients(grad_src)
    if dark_to_light.degenerate:
        flags.append("constant_image")

    ilm, rpe = segment_ilm_rpe(
        grad_src, cfg, dark_to_light, approximate_rpe(smoothed, lc.rpe_median_window)
    )

    flat, shifts = flatten(img, rpe)
    flat_grad = flat if lc.gradient_source == "raw" else smoothed.with_intensity(
        shift_columns(smoothed.intensity, shifts)
    )
    light_to_dark = vertical_gradients(flat_grad)[1]
    rows = img.rows
    ilm_f = np.clip(ilm.row + shifts, 0, rows - 1)
    rpe_f = np.clip(rpe.row + shifts, 0, rows - 1)

    try:
        binary, edge = preprocess.phase1_pipeline(flat, cfg.preprocess, ilm_rows=ilm_f)
        if binary.degenerate:
            flags.append("otsu_degenerate")
        disc = detect_discontinuities(edge, lc.gap_threshold, rows)
        roi = rnfl_roi(ilm_f, edge, disc, img.shape, lc.edge_margin, floor_limit=rpe_f)
        if roi.fovea_copy:
            flags.append("fovea_copy_used")
    except Phase1EmptyError:
        flags.append("phase1_empty_fallback")
        disc = []
        edge = Phase1Edge(np.full(img.cols, -1, dtype=np.int64))
        fallback = ilm_f + max(1, rows // 8)
        roi = rnfl_roi(ilm_f, edge, [], img.shape, 0, floor_limit=np.minimum(rpe_f, fallback + 1))

    # keep the RNFL step bound in the original frame, where the ILM obeys it too
    offsets = np.diff(shifts)
    rnfl_f = shortest_boundary(light_to_dark, roi.mask, cfg.graph, "RNFL", column_offsets=offsets)
    corrections: list[dict] = []
    if cfg.phase2.enabled:
        i_hat = ilm_intensity_estimate(flat, ilm_f, cfg.phase2)
        rnfl_f, corrections, p2_flags = phase2_correct(
            flat, rnfl_f, roi.mask, disc, i_hat, cfg.phase2, light_to_dark, cfg.graph, offsets
        )
        flags += p2_flags

    rnfl, clamped = unflatten_boundary(rnfl_f, shifts, rows)
    if clamped:
        flags.append("unflatten_clamped")
    ordered = np.clip(rnfl.row, ilm.row, rpe.row)
    if np.any(ordered != rnfl.row):
        flags.append("rnfl_clamped")
        rnfl = Boundary("RNFL", ordered, rnfl.cost)

    metrics, profiles = compute_metrics(img, ilm, rnfl, rpe, cfg.metrics)
    return SegmentationResult(
        ilm=ilm,
        rnfl=rnfl,
        rpe=rpe,
        metrics=metrics,
        profiles=profiles,
        corrections=corrections,
        flags=flags,
        source_id=img.source_id,
    )
