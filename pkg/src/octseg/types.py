"""Data containers shared across the segmentation pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

MIN_SIDE = 16

BOUNDARY_LABELS = ("ILM", "RNFL", "RPE", "RAW")


class InvalidImageError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BScan:
    """A single grayscale OCT B-scan.

    ``intensity`` is a float64 array of shape (rows, cols) with values in
    [0, 1]; row 0 is the top of the scan (vitreous side).
    """

    intensity: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.intensity, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidImageError(f"B-scan must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "intensity", arr)

    @property
    def rows(self) -> int:
        return self.intensity.shape[0]

    @property
    def cols(self) -> int:
        return self.intensity.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensity.shape

    def validate(self) -> "BScan":
        """Check the pipeline invariants (size floor, finite values in [0, 1])."""
        if self.rows < MIN_SIDE or self.cols < MIN_SIDE:
            raise InvalidImageError(
                f"B-scan {self.source_id!r} is {self.rows}x{self.cols}; "
                f"both sides must be >= {MIN_SIDE}"
            )
        a = self.intensity
        if not np.all(np.isfinite(a)):
            raise InvalidImageError(f"B-scan {self.source_id!r} has non-finite values")
        if a.min() < 0.0 or a.max() > 1.0:
            raise InvalidImageError(f"B-scan {self.source_id!r} has values outside [0, 1]")
        return self

    def with_intensity(self, intensity: np.ndarray) -> "BScan":
        return BScan(intensity, self.source_id)


@dataclass(frozen=True, eq=False)
class Boundary:
    """One row index per column.

    ``row[c]`` is the last row of the region above the interface, so the
    transition sits between ``row[c]`` and ``row[c] + 1``.
    """

    label: str
    row: np.ndarray
    cost: float = float("nan")

    def __post_init__(self):
        if self.label not in BOUNDARY_LABELS:
            raise ValueError(f"unknown boundary label {self.label!r}")
        object.__setattr__(self, "row", np.asarray(self.row, dtype=np.int64).ravel())

    @property
    def cols(self) -> int:
        return self.row.shape[0]

    def relabel(self, label: str) -> "Boundary":
        return Boundary(label, self.row.copy(), self.cost)

    def max_step(self) -> int:
        if self.cols < 2:
            return 0
        return int(np.abs(np.diff(self.row)).max())


@dataclass(frozen=True, eq=False)
class ThicknessProfile:
    upper: str
    lower: str
    px: np.ndarray
    axial_scale: float | None = None

    @property
    def um(self) -> np.ndarray | None:
        if self.axial_scale is None:
            return None
        return self.px * self.axial_scale

    @property
    def mean(self) -> float:
        return float(self.px.mean())

    @property
    def min(self) -> int:
        return int(self.px.min())

    @property
    def max(self) -> int:
        return int(self.px.max())

    def summary(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "mean_px": self.mean,
            "min_px": self.min,
            "max_px": self.max,
        }
        if self.axial_scale is not None:
            out["axial_scale_um_per_px"] = self.axial_scale
            out["mean_um"] = self.mean * self.axial_scale
        return out


@dataclass(eq=False)
class SegmentationResult:
    ilm: Boundary
    rnfl: Boundary
    rpe: Boundary
    metrics: dict[str, Any] = field(default_factory=dict)
    profiles: dict[str, ThicknessProfile] = field(default_factory=dict)
    corrections: list[dict[str, Any]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    source_id: str = ""

    @property
    def cols(self) -> int:
        return self.ilm.cols

    def boundaries(self) -> tuple[Boundary, Boundary, Boundary]:
        return self.ilm, self.rnfl, self.rpe
