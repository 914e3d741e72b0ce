"""Search-area computation, glint handling and approximate pupil location.

The search area (AOI) is sized from the pupil predictions plus a margin that
grows as certainty falls.  Inside it, a centre-positive/corner-negative
kernel finds the corneal reflection, and a three-band vertical line feature
scanned over the integral image re-estimates the pupil position whenever the
position certainty is low.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .estimator import EstimatorParams, PupilState
from .raster import Rect, build_integral, downsample, rect_sums


@dataclass(frozen=True)
class ShiftAllowances:
    """Per-frame change allowances interpolated between the extreme bounds
    and the theoretical maxima according to certainty."""

    pos: float
    circ: float
    ar: float


@dataclass(frozen=True)
class AoiParams:
    margin: float  # extra length added around the predicted pupil box
    allow: ShiftAllowances
    rect: Rect


@dataclass(frozen=True)
class Glint:
    present: bool
    x: int = 0  # AOI coordinates
    y: int = 0
    kernel_width: int = 11


@dataclass(frozen=True)
class HaarResponse:
    score: float
    x: float  # centre of the central band, AOI coordinates
    y: float
    mean_left: float
    mean_centre: float
    mean_right: float


def shift_allowances(state: PupilState, img_w: int, img_h: int,
                     params: EstimatorParams) -> ShiftAllowances:
    max_pos = max(img_w - state.width.pred, img_h - state.height.pred)
    circ = state.circ.pred
    max_circ = max((params.circ_max - circ) / params.circ_max,
                   (circ - params.circ_min) / circ)
    c_pos, c_app = state.cert_pos, state.cert_app
    return ShiftAllowances(
        pos=(1.0 - c_pos) * (max_pos - params.shift_hi_pos) + params.shift_hi_pos,
        circ=(1.0 - c_app) * (max_circ - params.shift_hi_circ) + params.shift_hi_circ,
        ar=(1.0 - c_app) * (1.0 - params.shift_hi_ar) + params.shift_hi_ar,
    )


def compute_aoi(state: PupilState, img_w: int, img_h: int,
                params: EstimatorParams) -> AoiParams:
    allow = shift_allowances(state, img_w, img_h, params)
    margin = state.circ.pred * allow.circ / math.pi + 2.0 * allow.pos
    w = int(math.ceil(margin + state.width.pred))
    h = int(math.ceil(margin + state.height.pred))
    w = min(max(w, 1), img_w)
    h = min(max(h, 1), img_h)
    x = int(round(state.x - w / 2.0))
    y = int(round(state.y - h / 2.0))
    x = min(max(x, 0), img_w - w)
    y = min(max(y, 0), img_h - h)
    return AoiParams(margin=margin, allow=allow, rect=Rect(x, y, w, h))


def detect_glint(aoi_img: np.ndarray, kernel_width: int = 11,
                 brightness_floor: int = 200) -> Glint:
    """Locate the corneal reflection inside the AOI.

    The convolution kernel is +1 at the centre and -1 at the four corners of
    a ``kernel_width`` square; it is evaluated only at pixels at least as
    bright as the floor.  Ties resolve to the first maximum in row-major
    order.  No qualifying pixel means no glint, which is a valid outcome.
    """
    if kernel_width < 3 or kernel_width % 2 == 0:
        raise ValueError("kernel width must be odd and >= 3")
    img = aoi_img.astype(np.int32)
    candidates = img >= brightness_floor
    if not candidates.any():
        return Glint(present=False, kernel_width=kernel_width)
    half = kernel_width // 2
    padded = np.pad(img, half, mode="edge")
    h, w = img.shape
    corners = (padded[0:h, 0:w] + padded[0:h, 2 * half:2 * half + w]
               + padded[2 * half:2 * half + h, 0:w]
               + padded[2 * half:2 * half + h, 2 * half:2 * half + w])
    response = np.where(candidates, img - corners, np.iinfo(np.int32).min)
    idx = int(np.argmax(response))
    y, x = divmod(idx, w)
    return Glint(present=True, x=x, y=y, kernel_width=kernel_width)


def haar_scan(ii: np.ndarray, pupil_w: int, pupil_h: int,
              glint: Optional[Glint] = None,
              w1: float = 3.3, w2: float = 1.0,
              stride: int = 1) -> Optional[HaarResponse]:
    """Exhaustive scan of the three-band vertical line feature.

    The feature is three side-by-side ``pupil_w x pupil_h`` rectangles; its
    response rewards a dark centre flanked by brighter bands.  When a glint
    square overlaps the central band, the glint's summed intensity and area
    are removed from the centre mean.  Returns the best placement, or None
    if the feature does not fit anywhere.  Ties resolve to the first
    placement in row-major order.
    """
    img_h, img_w = ii.shape[0] - 1, ii.shape[1] - 1
    pupil_w = max(int(pupil_w), 1)
    pupil_h = max(int(pupil_h), 1)
    feat_w = 3 * pupil_w
    if feat_w > img_w or pupil_h > img_h:
        return None
    xs = np.arange(0, img_w - feat_w + 1, stride)
    ys = np.arange(0, img_h - pupil_h + 1, stride)
    gx, gy = np.meshgrid(xs, ys)  # top-left of the full feature
    area = float(pupil_w * pupil_h)

    def band(x0, y0):
        return rect_sums(ii, x0, y0, x0 + pupil_w, y0 + pupil_h).astype(np.float64)

    sum_l = band(gx, gy)
    sum_c = band(gx + pupil_w, gy)
    sum_r = band(gx + 2 * pupil_w, gy)
    mean_l = sum_l / area
    mean_r = sum_r / area
    mean_c = sum_c / area
    centre_area = np.full_like(sum_c, area)

    if glint is not None and glint.present:
        half = glint.kernel_width // 2
        g_x0, g_y0 = glint.x - half, glint.y - half
        g_x1, g_y1 = glint.x + half + 1, glint.y + half + 1
        c_x0, c_y0 = gx + pupil_w, gy
        ov_x0 = np.clip(np.maximum(c_x0, g_x0), 0, img_w)
        ov_y0 = np.clip(np.maximum(c_y0, g_y0), 0, img_h)
        ov_x1 = np.clip(np.minimum(c_x0 + pupil_w, g_x1), 0, img_w)
        ov_y1 = np.clip(np.minimum(c_y0 + pupil_h, g_y1), 0, img_h)
        ov_w = np.maximum(ov_x1 - ov_x0, 0)
        ov_h = np.maximum(ov_y1 - ov_y0, 0)
        overlap = (ov_w > 0) & (ov_h > 0)
        if overlap.any():
            glint_sum = np.where(
                overlap,
                rect_sums(ii, ov_x0, ov_y0, np.maximum(ov_x1, ov_x0),
                          np.maximum(ov_y1, ov_y0)),
                0,
            ).astype(np.float64)
            glint_area = (ov_w * ov_h).astype(np.float64)
            centre_area = area - glint_area
            with np.errstate(divide="ignore", invalid="ignore"):
                mean_c = np.where(centre_area > 0,
                                  (sum_c - glint_sum) / np.maximum(centre_area, 1e-9),
                                  mean_c)

    score = -w1 * mean_c + w2 * (0.5 * (mean_l + mean_r) - mean_c)
    score = np.where(centre_area > 0, score, -np.inf)  # degenerate placements
    if not np.isfinite(score).any():
        return None
    idx = int(np.argmax(score))
    iy, ix = divmod(idx, score.shape[1])
    x0, y0 = int(xs[ix]), int(ys[iy])
    return HaarResponse(
        score=float(score[iy, ix]),
        x=x0 + pupil_w + pupil_w / 2.0,
        y=y0 + pupil_h / 2.0,
        mean_left=float(mean_l[iy, ix]),
        mean_centre=float(mean_c[iy, ix]),
        mean_right=float(mean_r[iy, ix]),
    )


def blend_position(found: tuple[float, float], predicted: tuple[float, float],
                   cert_pos: float) -> tuple[float, float]:
    """Mix detector output with the prediction according to certainty."""
    fx, fy = found
    px, py = predicted
    return fx + cert_pos * (px - fx), fy + cert_pos * (py - fy)


def approximate_position(aoi_img: np.ndarray, state: PupilState, aoi: AoiParams,
                         glint: Optional[Glint], cert_skip: float = 0.75,
                         downsample_area: int = 120 * 120) -> tuple[float, float]:
    """Re-estimate the pupil position inside the AOI when certainty is low.

    Returns frame coordinates.  Above the certainty band the prediction
    passes through unchanged.  Large AOIs are scanned at half resolution
    with stride 2 since only an approximate position is needed.
    """
    if state.cert_pos >= cert_skip:
        return state.x, state.y
    factor = 2 if aoi_img.shape[0] * aoi_img.shape[1] > downsample_area else 1
    scan = downsample(aoi_img, factor) if factor > 1 else aoi_img
    g = glint
    if g is not None and g.present and factor > 1:
        g = Glint(present=True, x=g.x // factor, y=g.y // factor,
                  kernel_width=max(g.kernel_width // factor, 3))
    resp = haar_scan(build_integral(scan),
                     int(round(state.width.pred / factor)),
                     int(round(state.height.pred / factor)),
                     g, stride=2 if factor > 1 else 1)
    if resp is None:
        return state.x, state.y
    found = (aoi.rect.x + resp.x * factor, aoi.rect.y + resp.y * factor)
    return blend_position(found, (state.x, state.y), state.cert_pos)
