"""Error metrics for hybrid (mechanistic + learned correction) predictions.

MAE and RMSE are measured on the residual target ``y_true - y_me``. Relative
errors, the #Err counts and MIR use the hybrid absolute prediction
``y_hat + y_me`` against ``y_true``. "AER" in some tables is the same
quantity as ARE.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .data import Dataset

logger = logging.getLogger(__name__)

LOW_PCT = 1.0
HIGH_PCT = 5.0


class MetricError(ValueError):
    """A metric is undefined for the given data."""


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    are_percent: float
    err_lt_1pct: int
    err_gt_5pct: int
    mir_percent: float
    m: int
    variant: str = "hybrid"
    excluded: int = 0  # samples with y_true == 0, left out of relative-error metrics

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def relative_errors(y_hat, y_true, y_me) -> np.ndarray:
    """Percent error of ``y_hat + y_me`` against ``y_true``; NaN where ``y_true`` is 0."""
    y_hat, y_true, y_me = (np.asarray(a, dtype=np.float64).reshape(-1) for a in (y_hat, y_true, y_me))
    if not y_hat.shape == y_true.shape == y_me.shape:
        raise MetricError(f"length mismatch: {y_hat.shape}, {y_true.shape}, {y_me.shape}")
    err = np.abs(y_hat + y_me - y_true)
    denom = np.abs(y_true)
    out = np.full_like(err, np.nan)
    ok = denom > 0
    out[ok] = err[ok] / denom[ok] * 100.0
    return out


def _count_below(rel: np.ndarray, pct: float) -> int:
    return int(np.sum(rel[~np.isnan(rel)] < pct))


def mir(y_hat, y_me, y_true) -> float:
    """Model improvement rate (percent) of the hybrid over the mechanistic model alone.

    Half is the relative reduction of total absolute error, half the share of
    previously >=1%-error samples that the hybrid brings under 1%.
    """
    y_hat, y_me, y_true = (np.asarray(a, dtype=np.float64).reshape(-1) for a in (y_hat, y_me, y_true))
    me_abs = np.sum(np.abs(y_me - y_true))
    if me_abs == 0.0:
        raise MetricError("MIR undefined: mechanistic model has zero total error")
    rel_h = relative_errors(y_hat, y_true, y_me)
    rel_me = relative_errors(np.zeros_like(y_hat), y_true, y_me)
    m_valid = int(np.sum(~np.isnan(rel_me)))
    me_lt = _count_below(rel_me, LOW_PCT)
    if m_valid - me_lt == 0:
        raise MetricError("MIR undefined: mechanistic model is already within 1% on every sample")
    first = 1.0 - np.sum(np.abs(y_hat + y_me - y_true)) / me_abs
    second = (_count_below(rel_h, LOW_PCT) - me_lt) / (m_valid - me_lt)
    return float((0.5 * first + 0.5 * second) * 100.0)


def _report(y_hat: np.ndarray, d: Dataset, variant: str, mir_value: float) -> MetricsReport:
    resid = y_hat - d.y
    rel = relative_errors(y_hat, d.y_true, d.y_me)
    valid = rel[~np.isnan(rel)]
    excluded = int(rel.size - valid.size)
    if excluded:
        logger.warning("%d sample(s) with y_true == 0 excluded from relative-error metrics", excluded)
    return MetricsReport(
        mae=float(np.mean(np.abs(resid))),
        rmse=float(np.sqrt(np.mean(resid * resid))),
        are_percent=float(np.mean(valid)) if valid.size else float("nan"),
        err_lt_1pct=int(np.sum(valid < LOW_PCT)),
        err_gt_5pct=int(np.sum(valid > HIGH_PCT)),
        mir_percent=mir_value,
        m=d.m,
        variant=variant,
        excluded=excluded,
    )


def full_report(y_hat, d: Dataset, variant: str = "RP-CATE") -> tuple:
    """(mechanistic-only, hybrid) reports; ``y_hat`` must be in original sample order."""
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y_hat.size != d.m:
        raise MetricError(f"{y_hat.size} predictions for {d.m} samples")
    mech = _report(np.zeros(d.m), d, "mechanistic", 0.0)
    hybrid = _report(y_hat, d, variant, mir(y_hat, d.y_me, d.y_true))
    return mech, hybrid


def write_reports(reports: Sequence[MetricsReport], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n", encoding="utf-8")


@dataclass
class AttentionMap:
    maps: list  # one m×n array per repetition
    feature_names: list = field(default_factory=list)

    @property
    def averages(self) -> list:
        return [a.mean(axis=0) for a in self.maps]


def export_attention(att: AttentionMap, path_prefix: Union[str, Path], figures: bool = True) -> list:
    """Write ``<prefix>_N<r>.csv`` (features × samples), ``<prefix>_averages.csv`` and SVG heatmaps.

    Returns the written paths.
    """
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    n = att.maps[0].shape[1]
    names = att.feature_names or [f"x{j}" for j in range(n)]
    written = []
    for r, a in enumerate(att.maps, start=1):
        p = prefix.with_name(f"{prefix.name}_N{r}.csv")
        with p.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["feature"] + [f"s{i}" for i in range(a.shape[0])])
            for j in range(n):
                writer.writerow([names[j]] + [repr(float(v)) for v in a[:, j]])
        written.append(p)
    p = prefix.with_name(f"{prefix.name}_averages.csv")
    with p.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["repetition"] + names)
        for r, avg in enumerate(att.averages, start=1):
            writer.writerow([r] + [repr(float(v)) for v in avg])
    written.append(p)
    if figures:
        from .plotting import attention_heatmap

        for r, a in enumerate(att.maps, start=1):
            written.append(attention_heatmap(a, att.averages[r - 1], names, prefix.with_name(f"{prefix.name}_N{r}.svg"), r))
    return written
