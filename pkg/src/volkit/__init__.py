"""Volumetric segmentation evaluation toolkit.

Core pieces: 3D volumes and NIfTI-1 I/O (:mod:`volkit.volgrid`), region and
boundary metrics (:mod:`volkit.segmetrics`), Dice-derived volume-error
bounds (:mod:`volkit.volbounds`), cohort statistics
(:mod:`volkit.cohortstats`), the linear-attention kernel
(:mod:`volkit.linattn`), and the batch CLI (:mod:`volkit.cli`).
"""

from .volgrid import BinaryMask, NiftiError, VolumeGrid, binarize, load_nifti, mask_volume_ml, write_nifti
from .segmetrics import (
    CaseMetrics,
    ConfusionCounts,
    UndefinedMetricError,
    boundary_metrics,
    cohen_kappa,
    confusion,
    edt,
    evaluate_case,
    extract_surface,
    region_metrics,
)
from .volbounds import VpeBounds, avpe_bound, bound_curve, verify_bounds_exhaustive, vpe, vpe_bounds_from_dice
from .cohortstats import MetricSummary, RegressionFit, TTestResult, cohort_report, linear_fit, paired_t_test, summarize
from .linattn import (
    AttentionGradients,
    AttentionOutput,
    AttentionTensors,
    attention_cost,
    bench_attention,
    flatten_feature_map,
    linear_attention,
    linear_attention_backward,
    quadratic_attention,
    softmax_cols,
    softmax_rows,
    unflatten_tokens,
)

__version__ = "0.1.0"
