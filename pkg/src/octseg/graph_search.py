"""Gradient-weighted pixel graphs and minimum-cost boundary tracing.

Every edge runs from a pixel in column ``c`` to a pixel in column ``c + 1``
whose row differs by at most ``max_vertical_step``. A virtual source feeds
every admissible pixel of the first column and every admissible pixel of
the last column drains into a virtual sink, so both endpoints are free.

Because the graph is layered by column, Dijkstra settles the columns in
order; :func:`shortest_boundary` exploits that and relaxes one column at a
time with numpy. :func:`dijkstra_boundary` is the textbook priority-queue
version of the same search and returns identical results.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .types import Boundary, BScan

DARK_TO_LIGHT = "dark_to_light"
LIGHT_TO_DARK = "light_to_dark"


class DisconnectedRoiError(ValueError):
    """No admissible left-to-right path exists through the ROI."""


@dataclass
class GraphConfig:
    w_min: float = 1e-5
    max_vertical_step: int = 1

    def __post_init__(self):
        if not self.w_min > 0:
            raise ValueError("graph.w_min must be > 0")
        if not isinstance(self.max_vertical_step, int) or not 1 <= self.max_vertical_step <= 8:
            raise ValueError("graph.max_vertical_step must be an integer in [1, 8]")


@dataclass(frozen=True, eq=False)
class GradientField:
    g: np.ndarray
    direction: str
    degenerate: bool = False

    @property
    def shape(self):
        return self.g.shape


def raw_vertical_derivative(intensity: np.ndarray) -> np.ndarray:
    """d[r] = I[r + 1] - I[r]; the last row sees a replicated border, so d = 0."""
    intensity = np.asarray(intensity, dtype=np.float64)
    d = np.zeros_like(intensity)
    d[:-1] = intensity[1:] - intensity[:-1]
    return d


def normalize_derivative(d: np.ndarray) -> tuple[np.ndarray, bool]:
    """Min-max normalize over the whole image; a constant field maps to 0.5."""
    lo, hi = float(d.min()), float(d.max())
    if hi == lo:
        return np.full(d.shape, 0.5), True
    return (d - lo) / (hi - lo), False


def vertical_gradients(img: BScan | np.ndarray) -> tuple[GradientField, GradientField]:
    """Complementary dark-to-light and light-to-dark fields in [0, 1]."""
    intensity = img.intensity if isinstance(img, BScan) else np.asarray(img, dtype=np.float64)
    if intensity.shape[0] < 2:
        raise ValueError("need at least two rows for a vertical gradient")
    dl, degenerate = normalize_derivative(raw_vertical_derivative(intensity))
    return (
        GradientField(dl, DARK_TO_LIGHT, degenerate),
        GradientField(1.0 - dl, LIGHT_TO_DARK, degenerate),
    )


def edge_weight(g_a, g_b, cfg: GraphConfig | None = None):
    """Weight of the edge between two pixels with gradients g_a and g_b."""
    w_min = cfg.w_min if cfg is not None else GraphConfig.w_min
    return (2.0 - (g_a + g_b)) + w_min


def _as_arrays(field, roi):
    g = field.g if isinstance(field, GradientField) else np.asarray(field, dtype=np.float64)
    if roi is None:
        adm = np.ones(g.shape, dtype=bool)
    else:
        adm = np.asarray(roi, dtype=bool)
    if adm.shape != g.shape:
        raise ValueError(f"ROI shape {adm.shape} does not match field shape {g.shape}")
    return g, adm


def _check_columns(adm: np.ndarray) -> None:
    empty = np.flatnonzero(~adm.any(axis=0))
    if empty.size:
        raise DisconnectedRoiError(f"ROI has no admissible pixel in column {int(empty[0])}")


def shortest_boundary(
    field,
    roi: np.ndarray | None = None,
    cfg: GraphConfig | None = None,
    label: str = "RAW",
    column_offsets: np.ndarray | None = None,
) -> Boundary:
    """Minimum-cost left-to-right path through the admissible pixels.

    Ties prefer the smaller row, both for the predecessor of every node and
    for the final column.

    ``column_offsets[c]`` (length cols - 1) recentres the step window of the
    move from column c to c + 1: row r may go to r' when
    ``|r' - r - column_offsets[c]| <= max_vertical_step``. Searching a
    flattened image with the flattening shift differences as offsets keeps
    the step bound in the original frame.
    """
    cfg = cfg or GraphConfig()
    g, adm = _as_arrays(field, roi)
    _check_columns(adm)
    rows, cols = g.shape
    m = cfg.max_vertical_step
    w_min = cfg.w_min
    inf = np.inf
    if column_offsets is None:
        column_offsets = np.zeros(max(cols - 1, 0), dtype=np.int64)
    elif len(column_offsets) != cols - 1:
        raise ValueError("column_offsets needs one entry per column transition")

    pred = np.zeros((rows, cols), dtype=np.int64)
    dist = np.where(adm[:, 0], w_min, inf)
    r_idx = np.arange(rows)
    cand = np.empty((2 * m + 1, rows))
    for c in range(1, cols):
        g_prev, g_cur = g[:, c - 1], g[:, c]
        # predecessor row r + s for target row r, ascending so argmin keeps the smallest
        steps = np.arange(-m, m + 1) - int(column_offsets[c - 1])
        cand.fill(inf)
        for k, s in enumerate(steps.tolist()):
            lo, hi = max(0, -s), min(rows, rows - s)
            if lo >= hi:
                continue
            src = slice(lo + s, hi + s)
            cand[k, lo:hi] = dist[src] + ((2.0 - (g_prev[src] + g_cur[lo:hi])) + w_min)
        best = np.argmin(cand, axis=0)
        new = cand[best, r_idx]
        new[~adm[:, c]] = inf
        pred[:, c] = r_idx + steps[best]
        dist = new

    total = dist + w_min
    end = int(np.argmin(total))
    cost = float(total[end])
    if not np.isfinite(cost):
        raise DisconnectedRoiError("no admissible path crosses the ROI")
    path = np.empty(cols, dtype=np.int64)
    path[-1] = end
    for c in range(cols - 1, 0, -1):
        path[c - 1] = pred[path[c], c]
    return Boundary(label, path, cost)


def dijkstra_boundary(
    field,
    roi: np.ndarray | None = None,
    cfg: GraphConfig | None = None,
    label: str = "RAW",
) -> Boundary:
    """Priority-queue Dijkstra over the same graph as :func:`shortest_boundary`.

    Slow (pure Python); kept as an independent route for cross-checking.
    """
    cfg = cfg or GraphConfig()
    g, adm = _as_arrays(field, roi)
    _check_columns(adm)
    rows, cols = g.shape
    m, w_min = cfg.max_vertical_step, cfg.w_min

    SOURCE, SINK = (-1, -1), (-2, -2)
    dist = {SOURCE: 0.0}
    pred: dict = {}
    heap = [(0.0, -1, -1)]
    done = set()
    while heap:
        d, c, r = heapq.heappop(heap)
        node = SOURCE if c == -1 else (SINK if c == cols else (r, c))
        if node in done:
            continue
        done.add(node)
        if node == SINK:
            break
        if node == SOURCE:
            succ = [((r2, 0), w_min) for r2 in np.flatnonzero(adm[:, 0]).tolist()]
        elif c == cols - 1:
            succ = [(SINK, w_min)]
        else:
            lo, hi = max(0, r - m), min(rows - 1, r + m)
            succ = [
                ((r2, c + 1), (2.0 - (g[r, c] + g[r2, c + 1])) + w_min)
                for r2 in range(lo, hi + 1)
                if adm[r2, c + 1]
            ]
        for v, w in succ:
            nd = d + w
            old = dist.get(v)
            if old is None or nd < old:
                dist[v] = nd
                pred[v] = node
                vc = cols if v == SINK else v[1]
                vr = -1 if v == SINK else v[0]
                heapq.heappush(heap, (nd, vc, vr))
            elif nd == old and node != SOURCE and v not in done and node[0] < pred[v][0]:
                pred[v] = node
    if SINK not in done:
        raise DisconnectedRoiError("no admissible path crosses the ROI")
    path = np.empty(cols, dtype=np.int64)
    node = pred[SINK]
    while node != SOURCE:
        path[node[1]] = node[0]
        node = pred[node]
    return Boundary(label, path, float(dist[SINK]))
