# planemorph/training/evaluation.py
"""
Evaluation of a registration model over a dataset.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from planemorph.common.schemas import MetricsReport, PairMetrics
from planemorph.config import THREADS
from planemorph.data.volume import DeformationField, RegistrationPair
from planemorph.nn.network import RegistrationNet, count_params, predict_field
from planemorph.registration.field_ops import jacobian_stats, tre, warp_labels
from planemorph.registration.objectives import dice_eval

logger = logging.getLogger(__name__)


def evaluate_pair(model: RegistrationNet, pair: RegistrationPair) -> PairMetrics:
    """Registers one pair and measures Dice, folding and TRE before and after."""
    start = time.perf_counter()
    field = predict_field(model, pair.fixed, pair.moving)
    runtime = time.perf_counter() - start

    dice = dice_before = None
    per_label: List[float] = []
    if pair.has_segs:
        n_labels = pair.n_labels
        warped = warp_labels(pair.seg_moving, field)
        per_label, dice = dice_eval(pair.seg_fixed, warped, n_labels)
        _, dice_before = dice_eval(pair.seg_fixed, pair.seg_moving, n_labels)

    tre_mean = tre_sd = tre_before = None
    if pair.has_landmarks:
        tre_mean, tre_sd = tre(pair.landmarks_moving, pair.landmarks_fixed, field, pair.fixed.spacing)
        tre_before, _ = tre(pair.landmarks_moving, pair.landmarks_fixed,
                            DeformationField.zeros(field.shape), pair.fixed.spacing)

    stats = jacobian_stats(field)
    return PairMetrics(
        name=pair.name,
        dice=dice,
        dice_per_label=per_label,
        dice_before=dice_before,
        neg_fraction=stats.neg_fraction,
        min_det=stats.min_det,
        tre_mean=tre_mean,
        tre_sd=tre_sd,
        tre_before=tre_before,
        runtime_s=runtime,
    )


def _mean_sd(values: Sequence[Optional[float]]):
    present = [v for v in values if v is not None]
    if not present:
        return None, None
    arr = np.asarray(present, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def aggregate(pairs: List[PairMetrics], n_params: int) -> MetricsReport:
    """Aggregates per-pair rows: means and population standard deviations."""
    dice_mean, dice_sd = _mean_sd([p.dice for p in pairs])
    dice_before_mean, _ = _mean_sd([p.dice_before for p in pairs])
    neg_mean, neg_sd = _mean_sd([p.neg_fraction for p in pairs])
    tre_mean, tre_sd = _mean_sd([p.tre_mean for p in pairs])
    tre_before_mean, _ = _mean_sd([p.tre_before for p in pairs])
    runtime_mean, _ = _mean_sd([p.runtime_s for p in pairs])
    return MetricsReport(
        n_pairs=len(pairs),
        n_params=n_params,
        dice_mean=dice_mean,
        dice_sd=dice_sd,
        dice_before_mean=dice_before_mean,
        neg_fraction_mean=neg_mean if neg_mean is not None else 0.0,
        neg_fraction_sd=neg_sd if neg_sd is not None else 0.0,
        tre_mean=tre_mean,
        tre_sd=tre_sd,
        tre_before_mean=tre_before_mean,
        runtime_mean_s=runtime_mean if runtime_mean is not None else 0.0,
        pairs=pairs,
    )


def evaluate(model: RegistrationNet, dataset: Sequence[RegistrationPair],
             threads: Optional[int] = None) -> MetricsReport:
    """
    Evaluates `model` on every pair.

    Pairs run concurrently when `threads` (default PLANEMORPH_THREADS) is > 1;
    rows keep dataset order either way.
    """
    workers = THREADS if threads is None else max(1, int(threads))
    if workers > 1 and len(dataset) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda p: evaluate_pair(model, p), dataset))
    else:
        rows = [evaluate_pair(model, p) for p in dataset]
    report = aggregate(rows, count_params(model))
    logger.info("Evaluated %d pairs: Dice %s (before %s), %%|J|<=0 %.4f, TRE %s (before %s).",
                report.n_pairs, _fmt(report.dice_mean), _fmt(report.dice_before_mean),
                report.neg_fraction_mean, _fmt(report.tre_mean), _fmt(report.tre_before_mean))
    return report


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def report_table(report: MetricsReport) -> pd.DataFrame:
    """Per-pair rows as a DataFrame (label lists omitted)."""
    return pd.DataFrame([p.model_dump(exclude={"dice_per_label"}) for p in report.pairs])
