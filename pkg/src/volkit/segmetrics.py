"""Region and boundary metrics for binary volumetric masks.

Region metrics come from voxelwise confusion counts; boundary metrics (HD95,
ASSD) from surface-to-surface distances computed through an exact anisotropic
Euclidean distance transform. Cohen's kappa treats the two masks as two
raters labeling every voxel of the volume.

Conventions baked in here:
  * surfaces use 6-connectivity and the grid border counts as background;
  * both masks empty -> dice = jaccard = 1, one empty -> 0;
  * 0/0 precision or recall is reported as None, never 0 or 1;
  * HD95 is the linear-interpolation 95th percentile of the pooled
    symmetric distance multiset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .volgrid import BinaryMask, mask_volume_ml

_SPACING_RTOL = 1e-6


class UndefinedMetricError(Exception):
    """Raised when a metric has no defined value for the given inputs."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class RegionMetrics:
    dice: float
    jaccard: float
    precision: Optional[float]
    recall: Optional[float]


@dataclass(frozen=True)
class CaseMetrics:
    """Full per-case evaluation record. None marks an undefined value."""

    dice: float
    jaccard: float
    precision: Optional[float]
    recall: Optional[float]
    hd95_mm: Optional[float]
    assd_mm: Optional[float]
    pred_volume_ml: float
    gt_volume_ml: float
    vpe: Optional[float]


CASE_CSV_HEADER = "case_id,dice,jaccard,precision,recall,hd95_mm,assd_mm,pred_ml,gt_ml,vpe"

# Metric fields summarized at cohort level, in report column order.
CASE_METRIC_FIELDS = (
    "dice",
    "jaccard",
    "precision",
    "recall",
    "hd95_mm",
    "assd_mm",
    "pred_volume_ml",
    "gt_volume_ml",
    "vpe",
)


def _check_compatible(a: BinaryMask, b: BinaryMask):
    if a.dims != b.dims:
        raise ValueError(f"shape mismatch: {a.dims} vs {b.dims}")
    sa, sb = np.asarray(a.spacing), np.asarray(b.spacing)
    if not np.allclose(sa, sb, rtol=_SPACING_RTOL, atol=0.0):
        raise ValueError(f"spacing mismatch: {a.spacing} vs {b.spacing}")


def confusion(pred: BinaryMask, gt: BinaryMask) -> ConfusionCounts:
    """Voxelwise confusion counts of prediction against ground truth."""
    _check_compatible(pred, gt)
    p = pred.data.astype(bool)
    g = gt.data.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = p.size - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def region_metrics(c: ConfusionCounts) -> RegionMetrics:
    """Dice, Jaccard, precision, and recall from confusion counts."""
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:  # both masks empty: perfect agreement on absence
        dice, jaccard = 1.0, 1.0
    else:
        dice = 2 * c.tp / denom
        jaccard = c.tp / (c.tp + c.fp + c.fn)
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp > 0 else None
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else None
    return RegionMetrics(dice=dice, jaccard=jaccard, precision=precision, recall=recall)


def _surface_bool(mask: BinaryMask) -> np.ndarray:
    fg = mask.data.astype(bool)
    # A foreground voxel is on the surface iff any of its 6 face neighbors is
    # background; padding makes the grid border count as background.
    padded = np.pad(fg, 1, constant_values=False)
    interior = np.ones_like(fg)
    for axis in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        interior &= padded[tuple(lo)] & padded[tuple(hi)]
    return fg & ~interior


def extract_surface(mask: BinaryMask) -> np.ndarray:
    """Integer (x, y, z) coordinates of the mask's 6-connectivity surface."""
    if mask.foreground_count() == 0:
        raise UndefinedMetricError("surface of an empty mask is undefined")
    return np.argwhere(_surface_bool(mask))


def edt(mask: BinaryMask) -> np.ndarray:
    """Exact anisotropic distance (mm) from every voxel to the mask surface.

    Distances are between voxel centers; surface voxels map to 0. Backed by
    the separable exact Euclidean distance transform.
    """
    surface = _surface_bool(mask)
    if not surface.any():
        raise UndefinedMetricError("distance field of an empty mask is undefined")
    return ndimage.distance_transform_edt(~surface, sampling=mask.spacing)


def _pooled_surface_distances(pred: BinaryMask, gt: BinaryMask) -> np.ndarray:
    pred_surface = _surface_bool(pred)
    gt_surface = _surface_bool(gt)
    pred_to_gt = edt(gt)[pred_surface]
    gt_to_pred = edt(pred)[gt_surface]
    return np.concatenate([pred_to_gt, gt_to_pred])


def boundary_metrics(pred: BinaryMask, gt: BinaryMask) -> tuple[float, float]:
    """HD95 and ASSD in millimeters over the pooled symmetric distance set."""
    _check_compatible(pred, gt)
    if pred.foreground_count() == 0 or gt.foreground_count() == 0:
        raise UndefinedMetricError("boundary metrics are undefined for an empty mask")
    pooled = _pooled_surface_distances(pred, gt)
    return float(np.percentile(pooled, 95)), float(pooled.mean())


def cohen_kappa(a: BinaryMask, b: BinaryMask) -> float:
    """Chance-corrected voxelwise agreement between two raters' masks.

    The universe is the full volume, background included.
    """
    _check_compatible(a, b)
    n = a.data.size
    av = a.data.astype(bool)
    bv = b.data.astype(bool)
    agree = int(np.count_nonzero(av == bv))
    na = int(np.count_nonzero(av))
    nb = int(np.count_nonzero(bv))
    # exact integer forms of n^2 * (p_o - p_e) and n^2 * (1 - p_e)
    chance = na * nb + (n - na) * (n - nb)
    den = n * n - chance
    if den == 0:
        raise UndefinedMetricError("kappa undefined: both raters constant and identical")
    return (agree * n - chance) / den


def evaluate_case(pred: BinaryMask, gt: BinaryMask) -> CaseMetrics:
    """Full metric record for one prediction/ground-truth pair."""
    _check_compatible(pred, gt)
    rm = region_metrics(confusion(pred, gt))
    pred_ml = mask_volume_ml(pred)
    gt_ml = mask_volume_ml(gt)

    if pred.foreground_count() > 0 and gt.foreground_count() > 0:
        hd95, assd = boundary_metrics(pred, gt)
    else:
        hd95, assd = None, None
    vpe = pred_ml / gt_ml - 1.0 if gt_ml > 0 else None

    return CaseMetrics(
        dice=rm.dice,
        jaccard=rm.jaccard,
        precision=rm.precision,
        recall=rm.recall,
        hd95_mm=hd95,
        assd_mm=assd,
        pred_volume_ml=pred_ml,
        gt_volume_ml=gt_ml,
        vpe=vpe,
    )
