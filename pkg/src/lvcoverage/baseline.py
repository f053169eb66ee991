"""Hand-crafted basal/apical slice detector (optimal-threshold + ellipse axis).

The procedure: binarize the center-cropped slice with the optimal
(between-class variance) threshold, keep the largest 8-connected bright
component as the blood pool, measure the major axis of the
moment-equivalent ellipse, then apply ratio rules to the axis sequence —
a jump above 1.2 while scanning from the mid-slice toward the base marks the
basal slice; a collapse below 0.2 while scanning base to apex marks the
apical slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MeasurementError
from .phantom import VolumeStack, crop_center

BASAL_RATIO = 1.2
APICAL_RATIO = 0.2
SINGLE_PIXEL_AXIS = 4 * math.sqrt(1 / 12)  # moment axis of one unit-square pixel


@dataclass
class SliceMeasurement:
    index: int
    mask: np.ndarray
    major_axis: float
    ratio_to_previous: float | None


def otsu_threshold(roi: np.ndarray) -> float:
    """Threshold maximizing between-class variance over a 256-bin histogram.

    Pixels >= the returned value are foreground. The image must contain at
    least two distinct intensity levels.
    """
    roi = np.asarray(roi, dtype=np.float64)
    lo, hi = float(roi.min()), float(roi.max())
    if lo == hi:
        raise MeasurementError("constant image has no optimal threshold")
    hist, edges = np.histogram(roi, bins=256, range=(lo, hi))
    p = hist.astype(np.float64) / hist.sum()
    omega = np.cumsum(p)
    mu = np.cumsum(p * np.arange(256))
    mu_total = mu[-1]
    between = np.zeros(256)
    interior = (omega > 0) & (omega < 1)
    between[interior] = (mu_total * omega[interior] - mu[interior]) ** 2 / (
        omega[interior] * (1 - omega[interior]))
    k = int(np.argmax(between))
    return float(edges[k + 1])


def binarize(roi: np.ndarray) -> np.ndarray:
    return np.asarray(roi) >= otsu_threshold(roi)


def label_components(mask: np.ndarray) -> np.ndarray:
    """8-connected component labels via min-label propagation.

    Returns int labels, 0 = background. Vectorized: each sweep takes the
    neighborhood minimum over all eight shifts until a fixpoint.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.where(mask, np.arange(1, h * w + 1).reshape(h, w), 0).astype(np.int64)
    sentinel = h * w + 2
    while True:
        work = np.where(mask, labels, sentinel)
        best = work.copy()
        best[1:, :] = np.minimum(best[1:, :], work[:-1, :])
        best[:-1, :] = np.minimum(best[:-1, :], work[1:, :])
        best[:, 1:] = np.minimum(best[:, 1:], work[:, :-1])
        best[:, :-1] = np.minimum(best[:, :-1], work[:, 1:])
        best[1:, 1:] = np.minimum(best[1:, 1:], work[:-1, :-1])
        best[1:, :-1] = np.minimum(best[1:, :-1], work[:-1, 1:])
        best[:-1, 1:] = np.minimum(best[:-1, 1:], work[1:, :-1])
        best[:-1, :-1] = np.minimum(best[:-1, :-1], work[1:, 1:])
        new = np.where(mask, best, 0)
        if np.array_equal(new, labels):
            return labels
        labels = new


def largest_component(mask: np.ndarray) -> np.ndarray:
    """The biggest 8-connected foreground component (the blood pool)."""
    if not np.asarray(mask).any():
        raise MeasurementError("empty mask: no blood-pool component")
    labels = label_components(mask)
    ids, counts = np.unique(labels[labels > 0], return_counts=True)
    return labels == ids[np.argmax(counts)]


def major_axis_length(mask: np.ndarray) -> float:
    """Major axis of the ellipse with the mask's normalized second moments.

    Each pixel counts as a unit square (the +1/12 term), so a single pixel
    measures ``SINGLE_PIXEL_AXIS`` rather than zero. The largest connected
    component is measured when the mask has several.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MeasurementError("empty mask has no major axis")
    pool = largest_component(mask)
    ys, xs = np.nonzero(pool)
    n = len(ys)
    my, mx = ys.mean(), xs.mean()
    uyy = float(((ys - my) ** 2).sum()) / n + 1 / 12
    uxx = float(((xs - mx) ** 2).sum()) / n + 1 / 12
    uxy = float(((ys - my) * (xs - mx)).sum()) / n
    spread = math.sqrt((uyy - uxx) ** 2 + 4 * uxy ** 2)
    return 4 * math.sqrt((uyy + uxx + spread) / 2)


def measure_slices(volume: VolumeStack) -> list:
    """Axis length per slice over the standard center crop."""
    out = []
    prev = None
    for index in range(volume.n_slices):
        roi = crop_center(volume.slices[index])
        mask = binarize(roi)
        axis = major_axis_length(mask)
        out.append(SliceMeasurement(
            index=index, mask=mask, major_axis=axis,
            ratio_to_previous=None if prev is None else axis / prev,
        ))
        prev = axis
    return out


def basal_index_from_lengths(lengths) -> int | None:
    """Ratio rule on an axis-length sequence ordered base -> apex.

    Scans from the mid-slice toward the base; fires at the first slice whose
    length exceeds 1.2x the previously measured one (strict inequality).
    """
    n = len(lengths)
    mid = n // 2
    for k in range(mid - 1, -1, -1):
        if lengths[k] is None or lengths[k + 1] is None:
            raise MeasurementError(f"no measurable pool at slice {k} or {k + 1}")
        if lengths[k] / lengths[k + 1] > BASAL_RATIO:
            return k
    return None


def apical_index_from_lengths(lengths) -> int | None:
    """Scan base -> apex; fires when the length collapses below 0.2x (strict)."""
    for k in range(1, len(lengths)):
        if lengths[k] is None or lengths[k - 1] is None:
            raise MeasurementError(f"no measurable pool at slice {k - 1} or {k}")
        if lengths[k] / lengths[k - 1] < APICAL_RATIO:
            return k
    return None


def detect_basal(volume: VolumeStack) -> int | None:
    """Index of the detected basal slice, or None when it looks missing."""
    if volume.n_slices < 3:
        raise MeasurementError("need at least 3 slices")
    lengths = [m.major_axis for m in measure_slices(volume)]
    return basal_index_from_lengths(lengths)


def detect_apical(volume: VolumeStack) -> int | None:
    """Index of the detected apical slice, or None when it looks missing."""
    if volume.n_slices < 3:
        raise MeasurementError("need at least 3 slices")
    lengths = [m.major_axis for m in measure_slices(volume)]
    return apical_index_from_lengths(lengths)
