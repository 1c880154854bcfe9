"""Synthetic B-scans with known boundaries, and scoring against them.

Boundary rows follow the pipeline convention: row ``b`` is the last row of
the upper region, so the layer below starts at ``b + 1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml
from scipy.interpolate import PchipInterpolator

from .types import Boundary, BScan

LABELS = ("ilm", "rnfl", "rpe")


class PhantomSpecError(ValueError):
    pass


@dataclass
class Fovea:
    center: float
    width: float
    depth: float
    rnfl_pinch: bool = False
    # columns over which RNFL thickness recovers outside the pinch; None = 2x max thickness
    pinch_ramp: float | None = None


@dataclass
class Vessel:
    column: int
    width: int
    attenuation: float


@dataclass
class ExtraBand:
    """Rectangle of fixed intensity placed relative to the RNFL boundary.

    Covers rows ``rnfl + offset + 1 .. rnfl + offset + thickness`` on columns
    ``[start_col, stop_col)``, followed by a linear fade back to the inner
    tissue over ``fade`` rows. Never paints past the RPE boundary.
    """

    start_col: int
    stop_col: int
    offset: int
    thickness: int
    intensity: float
    fade: int = 0


@dataclass
class PhantomSpec:
    rows: int = 160
    cols: int = 256
    ilm_curve: list = field(default_factory=lambda: [[0, 40], [255, 40]])
    rnfl_curve: list = field(default_factory=lambda: [[0, 50], [255, 50]])
    rpe_curve: list = field(default_factory=lambda: [[0, 110], [255, 110]])
    vitreous: float = 0.08
    rnfl_band: float = 0.72
    inner_tissue: float = 0.32
    rpe_band: float = 0.95
    below: float = 0.28
    rpe_thickness: int = 8
    fovea: Fovea | None = None
    vessels: list = field(default_factory=list)
    extra_bands: list = field(default_factory=list)
    speckle_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.fovea, Mapping):
            self.fovea = Fovea(**self.fovea)
        self.vessels = [Vessel(**v) if isinstance(v, Mapping) else v for v in self.vessels]
        self.extra_bands = [
            ExtraBand(**b) if isinstance(b, Mapping) else b for b in self.extra_bands
        ]

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PhantomSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise PhantomSpecError(f"unknown phantom keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise PhantomSpecError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def load_phantom_spec(path) -> PhantomSpec:
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, Mapping):
        raise PhantomSpecError(f"{path}: phantom spec must be a mapping")
    return PhantomSpec.from_dict(data)


def _curve(points: Sequence, cols: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise PhantomSpecError("curve needs at least one control point")
    order = np.argsort(pts[:, 0], kind="stable")
    pts = pts[order]
    x = np.arange(cols, dtype=np.float64)
    if pts.shape[0] == 1:
        return np.full(cols, pts[0, 1])
    if np.any(np.diff(pts[:, 0]) <= 0):
        raise PhantomSpecError("curve control points need distinct columns")
    return PchipInterpolator(pts[:, 0], pts[:, 1], extrapolate=True)(x)


def ground_truth_rows(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cols = spec.cols
    ilm = _curve(spec.ilm_curve, cols)
    rnfl = _curve(spec.rnfl_curve, cols)
    rpe = _curve(spec.rpe_curve, cols)
    thickness = rnfl - ilm
    if np.any(thickness < 0) or np.any(rpe < rnfl):
        raise PhantomSpecError("curves must satisfy ilm <= rnfl <= rpe")
    fv = spec.fovea
    if fv is not None:
        if fv.width <= 0 or fv.depth < 0:
            raise PhantomSpecError("fovea width must be > 0 and depth >= 0")
        x = np.arange(cols, dtype=np.float64)
        dist = np.abs(x - fv.center)
        half = fv.width / 2.0
        dip = np.where(dist <= half, fv.depth * 0.5 * (1 + np.cos(np.pi * dist / half)), 0.0)
        ilm = ilm + dip
        if fv.rnfl_pinch:
            ramp = fv.pinch_ramp if fv.pinch_ramp is not None else max(1.0, 2.0 * thickness.max())
            thickness = thickness * np.clip((dist - half) / ramp, 0.0, 1.0)
    ilm_i = np.rint(ilm).astype(np.int64)
    rnfl_i = ilm_i + np.rint(thickness).astype(np.int64)
    rpe_i = np.rint(rpe).astype(np.int64)
    if np.any(rnfl_i > rpe_i):
        raise PhantomSpecError("fovea dip pushes the RNFL below the RPE")
    if ilm_i.min() < 0 or rpe_i.max() + spec.rpe_thickness >= spec.rows:
        raise PhantomSpecError("layers do not fit inside the image")
    return ilm_i, rnfl_i, rpe_i


def _check_intensities(spec: PhantomSpec) -> None:
    values = [spec.vitreous, spec.rnfl_band, spec.inner_tissue, spec.rpe_band, spec.below]
    values += [b.intensity for b in spec.extra_bands]
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise PhantomSpecError("layer intensities must lie in [0, 1]")
    for v in spec.vessels:
        if not 0.0 <= v.attenuation <= 1.0 or v.width < 1:
            raise PhantomSpecError("vessel attenuation must be in [0, 1] and width >= 1")
    if spec.speckle_sigma < 0:
        raise PhantomSpecError("speckle_sigma must be >= 0")
    if spec.rows < 16 or spec.cols < 16:
        raise PhantomSpecError("phantom must be at least 16x16")


def generate(spec: PhantomSpec) -> tuple[BScan, tuple[Boundary, Boundary, Boundary]]:
    """Render the phantom and return it with its ILM, RNFL and RPE truth."""
    _check_intensities(spec)
    ilm, rnfl, rpe = ground_truth_rows(spec)
    rows, cols = spec.rows, spec.cols
    r = np.arange(rows)[:, None]
    img = np.full((rows, cols), spec.below)
    img[r <= rpe + spec.rpe_thickness] = spec.rpe_band
    img[r <= rpe] = spec.inner_tissue
    img[r <= rnfl] = spec.rnfl_band
    img[r <= ilm] = spec.vitreous

    for band in spec.extra_bands:
        for c in range(max(0, band.start_col), min(cols, band.stop_col)):
            top = rnfl[c] + band.offset + 1
            stop = min(top + band.thickness, rpe[c] + 1)
            if top < stop:
                img[top:stop, c] = band.intensity
            for k in range(band.fade):
                rr = top + band.thickness + k
                if rr > rpe[c]:
                    break
                t = (k + 1) / (band.fade + 1)
                img[rr, c] = (1 - t) * band.intensity + t * spec.inner_tissue

    for v in spec.vessels:
        c0 = max(0, v.column - v.width // 2)
        c1 = min(cols, c0 + v.width)
        for c in range(c0, c1):
            img[ilm[c] + 1 :, c] *= v.attenuation

    if spec.speckle_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        img = img * (1.0 + spec.speckle_sigma * rng.standard_normal(img.shape))
    img = np.clip(img, 0.0, 1.0)
    truth = (Boundary("ILM", ilm), Boundary("RNFL", rnfl), Boundary("RPE", rpe))
    return BScan(img, source_id=f"phantom(seed={spec.seed})"), truth


@dataclass
class BoundaryScore:
    mae: float
    max_error: int
    within_1px: float
    tolerance: float | None = None

    @property
    def passed(self) -> bool:
        return self.tolerance is None or self.mae <= self.tolerance


@dataclass
class EvalReport:
    scores: dict[str, BoundaryScore]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.scores.values())

    def mae(self, label: str) -> float:
        return self.scores[label].mae

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            k: {
                "mae_px": s.mae,
                "max_error_px": s.max_error,
                "within_1px": s.within_1px,
                "tolerance_px": s.tolerance,
                "pass": s.passed,
            }
            for k, s in self.scores.items()
        }
        out["pass"] = self.passed
        return out


def _rows_of(b) -> np.ndarray:
    return b.row if isinstance(b, Boundary) else np.asarray(b, dtype=np.int64)


def evaluate(pred, truth, tolerances=None) -> EvalReport:
    """Per-boundary absolute row error of ``pred`` against ``truth``.

    ``pred`` and ``truth`` are (ILM, RNFL, RPE) triples or mappings keyed by
    ``ilm``/``rnfl``/``rpe``; ``tolerances`` is one MAE bound for all three
    or a mapping per boundary.
    """
    if isinstance(pred, Mapping):
        pred = [pred[k] for k in LABELS]
    if isinstance(truth, Mapping):
        truth = [truth[k] for k in LABELS]
    if not isinstance(tolerances, Mapping):
        tolerances = {k: tolerances for k in LABELS}
    scores = {}
    for name, p, t in zip(LABELS, pred, truth):
        p, t = _rows_of(p), _rows_of(t)
        if p.shape != t.shape:
            raise ValueError(f"{name}: {p.size} predicted columns vs {t.size} truth columns")
        if p.size == 0:
            raise ValueError(f"{name}: empty boundary")
        err = np.abs(p - t)
        tol = tolerances.get(name)
        scores[name] = BoundaryScore(
            mae=float(err.mean()),
            max_error=int(err.max()),
            within_1px=float(np.mean(err <= 1)),
            tolerance=None if tol is None else float(tol),
        )
    return EvalReport(scores)


def tilted_spec(
    tilt: float = 0.0,
    rows: int = 160,
    cols: int = 256,
    ilm: float = 40.0,
    rnfl_thickness: float = 10.0,
    retina_thickness: float = 70.0,
    **kwargs,
) -> PhantomSpec:
    """Flat-layer phantom rotated by ``tilt`` px/col about the image centre."""
    mid = (cols - 1) / 2.0
    def line(y0):
        return [[0, y0 - tilt * mid], [cols - 1, y0 + tilt * mid]]
    top = ilm
    return PhantomSpec(
        rows=rows,
        cols=cols,
        ilm_curve=line(top),
        rnfl_curve=line(top + rnfl_thickness),
        rpe_curve=line(top + retina_thickness),
        **kwargs,
    )


def ramp_thickness_spec(max_thickness: int = 12, rows: int = 160, cols: int = 256, **kwargs) -> PhantomSpec:
    """RNFL thickness growing linearly from 0 at the left edge to ``max_thickness``."""
    return PhantomSpec(
        rows=rows,
        cols=cols,
        ilm_curve=[[0, 40], [cols - 1, 40]],
        rnfl_curve=[[0, 40], [cols - 1, 40 + max_thickness]],
        rpe_curve=[[0, 110], [cols - 1, 110]],
        **kwargs,
    )


def false_edge_spec(side: str = "right", shelf: int = 7, tilt: float = 0.0, **kwargs) -> PhantomSpec:
    """Phantom whose left or right third hides a stronger light-to-dark edge.

    Under the RNFL lies a moderately bright shelf ending at a dark cleft that
    sits on top of a bright band fading into the inner tissue. The cleft's
    upper edge outcompetes the true RNFL edge, and the bright band sits right
    under it.
    """
    spec = tilted_spec(tilt=tilt, **kwargs)
    cols = spec.cols
    third = math.ceil(cols / 3)
    start, stop = (0, third) if side == "left" else (cols - third, cols)
    spec.extra_bands = [
        ExtraBand(start, stop, offset=0, thickness=shelf, intensity=0.6),
        ExtraBand(start, stop, offset=shelf, thickness=1, intensity=0.3),
        ExtraBand(start, stop, offset=shelf + 1, thickness=5, intensity=0.85, fade=20),
    ]
    return spec
