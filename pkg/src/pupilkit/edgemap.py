"""Edge detection, morphological thinning and 8-connected edge extraction.

The Canny stage is a classic gradient / non-maximum-suppression /
hysteresis implementation on the blurred AOI.  Thinning trims edges to
single-pixel thickness with two local patterns; trimmed pixels are tagged
rather than discarded so they can be restored before ellipse fitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .raster import as_gray, blur_float

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class EdgeMap:
    active: np.ndarray   # bool grid of surviving edge pixels
    removed: np.ndarray  # bool grid of pixels erased by thinning


@dataclass
class Edge:
    """One 8-connected edge component.

    ``points`` is an (N, 2) int array of (x, y) pixels.  Before segmentation
    the order is arbitrary; afterwards it follows the chain.  ``removed``
    holds tagged pixels attached to this component, restorable for fitting.
    """

    points: np.ndarray
    removed: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))
    ordered: bool = False
    cyclic: bool = False

    def __len__(self) -> int:
        return len(self.points)


def canny(aoi_img: np.ndarray, low: float = 75.0, high: float = 150.0,
          blur_sigma: float = 1.4) -> EdgeMap:
    """Binary edge map of the AOI (Sobel magnitude, L2 norm).

    ``low``/``high`` are hysteresis thresholds on the 3x3 Sobel gradient
    magnitude of the Gaussian-blurred image.
    """
    if not 0 <= low <= high:
        raise ValueError("thresholds must satisfy 0 <= low <= high")
    # float32 throughout: the hysteresis thresholds sit far above the
    # rounding noise of the blurred gradient.
    img = blur_float(as_gray(aoi_img), blur_sigma, dtype=np.float32)
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    # Squared magnitude everywhere: the NMS comparisons and thresholds are
    # monotone, so the square root is never needed.
    mag = gx * gx + gy * gy

    # Quantize gradient direction into 4 bins and suppress non-maxima along
    # the gradient.  Bin 0: E/W, 1: NE/SW, 2: N/S, 3: NW/SE.  The bins are
    # separated by comparisons against tan(22.5 deg) instead of arctan2.
    ax = np.abs(gx)
    ay = np.abs(gy)
    t = math.tan(math.pi / 8)
    horiz = ay <= t * ax
    vert = ax <= t * ay
    diag_ne = ~horiz & ~vert & ((gx > 0) == (gy > 0))
    sector = np.where(horiz, 0, np.where(vert, 2, np.where(diag_ne, 1, 3)))

    padded = np.pad(mag, 1, mode="constant")

    def shifted(dy: int, dx: int) -> np.ndarray:
        return padded[1 + dy:1 + dy + mag.shape[0], 1 + dx:1 + dx + mag.shape[1]]

    neighbour_pairs = {
        0: ((0, 1), (0, -1)),
        1: ((1, 1), (-1, -1)),
        2: ((1, 0), (-1, 0)),
        3: ((1, -1), (-1, 1)),
    }
    keep = np.zeros(mag.shape, dtype=bool)
    for sec, ((dy1, dx1), (dy2, dx2)) in neighbour_pairs.items():
        sel = sector == sec
        keep |= sel & (mag >= shifted(dy1, dx1)) & (mag > shifted(dy2, dx2))
    nms = np.where(keep, mag, 0.0)

    strong = nms > high * high
    weak = nms > low * low
    active = ndimage.binary_dilation(strong, structure=_EIGHT, iterations=0,
                                     mask=weak)
    return EdgeMap(active=active, removed=np.zeros_like(active))


# Thinning patterns: (required-on neighbour offsets, required-off offsets),
# offsets as (dy, dx).  Pattern 1 trims staircase corners of diagonal edges,
# pattern 2 trims rows of horizontally/vertically oriented 2-px bars.  Both
# are expanded over all rotations/mirrorings; each individual removal keeps
# the remaining neighbours mutually 8-connected.
_BASE_PATTERNS = [
    (((-1, 0), (0, 1)), ((1, -1),)),
    (((0, -1), (-1, 0), (0, 1)), ((1, -1), (1, 0), (1, 1))),
]


def _symmetries(pattern):
    def rot(offsets):  # 90 degrees clockwise: (dy, dx) -> (dx, -dy)
        return tuple((dx, -dy) for dy, dx in offsets)

    def mirror(offsets):
        return tuple((dy, -dx) for dy, dx in offsets)

    on, off = pattern
    seen = set()
    out = []
    for _ in range(4):
        for candidate in ((on, off), (mirror(on), mirror(off))):
            key = (frozenset(candidate[0]), frozenset(candidate[1]))
            if key not in seen:
                seen.add(key)
                out.append(candidate)
        on, off = rot(on), rot(off)
    return out


_PATTERNS = [v for p in _BASE_PATTERNS for v in _symmetries(p)]


def thin(edge_map: EdgeMap) -> EdgeMap:
    """Trim edges to single-pixel thickness; removed pixels are tagged.

    Pixels are visited in raster order and every pattern symmetry is tested
    against the current grid; passes repeat until a fixpoint.  The operation
    is idempotent and never splits a connected component.
    """
    grid = edge_map.active.copy()
    removed = edge_map.removed.copy()
    h, w = grid.shape
    padded = np.pad(grid, 1)

    # Vectorized prefilter: pixels matching some pattern in the initial grid.
    # Pixels that only become removable after a neighbour goes are picked up
    # through the candidate requeue below.
    match = np.zeros_like(grid)
    for on, off in _PATTERNS:
        m = grid.copy()
        for dy, dx in on:
            m &= padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        for dy, dx in off:
            m &= ~padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        match |= m
    candidates = np.argwhere(match)
    while True:
        removed_any = False
        next_candidates = []
        for y, x in candidates:
            if not padded[y + 1, x + 1]:
                continue
            for on, off in _PATTERNS:
                if all(padded[y + 1 + dy, x + 1 + dx] for dy, dx in on) and \
                        not any(padded[y + 1 + dy, x + 1 + dx] for dy, dx in off):
                    padded[y + 1, x + 1] = False
                    removed[y, x] = True
                    removed_any = True
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = y + dy, x + dx
                            if 0 <= ny < h and 0 <= nx < w and padded[ny + 1, nx + 1]:
                                next_candidates.append((ny, nx))
                    break
        if not removed_any:
            break
        candidates = next_candidates
    return EdgeMap(active=padded[1:-1, 1:-1], removed=removed)


def extract_edges(edge_map: EdgeMap, min_size: int = 1) -> list[Edge]:
    """Split the map into 8-connected components, one Edge per component.

    Tagged removed pixels are attached to the component of their nearest
    active pixel.
    """
    labels, count = ndimage.label(edge_map.active, structure=_EIGHT)
    if count == 0:
        return []
    removed_pts = np.argwhere(edge_map.removed)
    removed_labels = np.empty(0, dtype=int)
    if len(removed_pts):
        # Thinning removes pixels next to the surviving chain, so nearly all
        # tagged pixels touch their component; a cheap neighbour-label max
        # resolves those and the full distance transform handles the rest.
        neighbour = ndimage.grey_dilation(labels, size=(3, 3), mode="constant")
        removed_labels = neighbour[removed_pts[:, 0], removed_pts[:, 1]]
        orphan = removed_labels == 0
        if orphan.any():
            # Nearest active pixel via distance transform index lookup.
            _, (iy, ix) = ndimage.distance_transform_edt(~edge_map.active,
                                                         return_indices=True)
            removed_labels[orphan] = labels[iy[removed_pts[orphan, 0],
                                               removed_pts[orphan, 1]],
                                            ix[removed_pts[orphan, 0],
                                               removed_pts[orphan, 1]]]

    # Group active pixels by label with one stable sort; within a component
    # the raster order is preserved.
    active_pts = np.argwhere(labels > 0)
    active_labels = labels[active_pts[:, 0], active_pts[:, 1]]
    order = np.argsort(active_labels, kind="stable")
    active_pts = active_pts[order]
    active_labels = active_labels[order]
    bounds = np.searchsorted(active_labels, np.arange(1, count + 2))

    edges = []
    for lab in range(1, count + 1):
        pts = active_pts[bounds[lab - 1]:bounds[lab]][:, ::-1]  # to (x, y)
        if len(pts) < min_size:
            continue
        tagged = removed_pts[removed_labels == lab][:, ::-1] if len(removed_pts) \
            else np.empty((0, 2), dtype=np.int64)
        edges.append(Edge(points=pts.astype(np.int64), removed=tagged.astype(np.int64)))
    return edges


def order_chain(points: np.ndarray) -> tuple[np.ndarray, bool]:
    """Order a non-branching 8-connected pixel set into a chain.

    Returns (ordered points, cyclic flag).  Input must have no pixel with
    more than two neighbours; branching sets must go through path
    segmentation first.
    """
    pts = [tuple(p) for p in np.asarray(points)]
    if len(pts) == 1:
        return np.asarray(points).reshape(1, 2), False
    index = set(pts)
    neigh = {}
    for x, y in pts:
        ns = [(x + dx, y + dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
              if (dx or dy) and (x + dx, y + dy) in index]
        if len(ns) > 2:
            raise ValueError("branching pixel set; run path segmentation first")
        neigh[(x, y)] = ns
    terminals = [p for p, ns in neigh.items() if len(ns) == 1]
    start = min(terminals) if terminals else min(pts)
    chain = [start]
    seen = {start}
    current = start
    while True:
        nxt = [n for n in neigh[current] if n not in seen]
        if not nxt:
            break
        current = nxt[0]
        chain.append(current)
        seen.add(current)
    cyclic = not terminals and len(chain) == len(pts) and \
        chain[0] in neigh[chain[-1]]
    if len(chain) != len(pts):
        raise ValueError("pixel set is not a single connected chain")
    return np.asarray(chain, dtype=np.int64), cyclic
