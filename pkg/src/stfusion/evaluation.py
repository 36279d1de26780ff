"""Forecast accuracy metrics (MAE, MAPE, RMSE) per horizon and pooled,
with zero-target masking for the percentage error, plus report rendering.

All metrics are computed on de-normalized (original-scale) values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Normalizer, SampleSet
from .errors import UndefinedMetricError
from .model import ModelConfig


def _masked(pred, target, mask):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if mask is None:
        return pred.ravel(), target.ravel()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != target.shape:
        raise ValueError("mask shape must match targets")
    return pred[mask], target[mask]


def mae(pred, target, mask=None) -> float:
    p, t = _masked(pred, target, mask)
    if p.size == 0:
        raise UndefinedMetricError("MAE over an empty element set")
    return float(np.abs(p - t).mean())


def rmse(pred, target, mask=None) -> float:
    p, t = _masked(pred, target, mask)
    if p.size == 0:
        raise UndefinedMetricError("RMSE over an empty element set")
    return float(np.sqrt(((p - t) ** 2).mean()))


def mape(pred, target, epsilon_mask: float = 0.0, mask=None) -> float:
    """Mean absolute percentage error over targets with |y| > epsilon_mask."""
    p, t = _masked(pred, target, mask)
    keep = np.abs(t) > epsilon_mask
    if not np.any(keep):
        raise UndefinedMetricError(
            f"MAPE undefined: no targets with |y| > {epsilon_mask}")
    return float((np.abs(p[keep] - t[keep]) / np.abs(t[keep])).mean() * 100.0)


@dataclass
class EvalReport:
    """Per-horizon and pooled metrics; `masked_out` counts elements the MAPE
    mask dropped."""

    horizon_mae: np.ndarray
    horizon_mape: np.ndarray
    horizon_rmse: np.ndarray
    overall_mae: float
    overall_mape: float
    overall_rmse: float
    sample_count: int
    masked_out: int

    @property
    def horizons(self) -> int:
        return len(self.horizon_mae)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("horizon,mae,mape,rmse\n")
            for h in range(self.horizons):
                fh.write(f"{h + 1},{self.horizon_mae[h]:.6f},"
                         f"{self.horizon_mape[h]:.6f},{self.horizon_rmse[h]:.6f}\n")
            fh.write(f"overall,{self.overall_mae:.6f},{self.overall_mape:.6f},"
                     f"{self.overall_rmse:.6f}\n")

    def render_text(self) -> str:
        lines = [f"{'horizon':>8} {'MAE':>10} {'MAPE%':>10} {'RMSE':>10}"]
        for h in range(self.horizons):
            lines.append(f"{h + 1:>8} {self.horizon_mae[h]:>10.4f} "
                         f"{self.horizon_mape[h]:>10.4f} {self.horizon_rmse[h]:>10.4f}")
        lines.append(f"{'overall':>8} {self.overall_mae:>10.4f} "
                     f"{self.overall_mape:>10.4f} {self.overall_rmse:>10.4f}")
        lines.append(f"samples: {self.sample_count}   "
                     f"mape-masked elements: {self.masked_out}")
        return "\n".join(lines)


def build_report(pred: np.ndarray, target: np.ndarray,
                 epsilon_mask: float = 0.0, mask=None) -> EvalReport:
    """Metrics from aligned (count, P, N, d) prediction/target tensors."""
    horizons = target.shape[1]
    h_mae = np.empty(horizons)
    h_mape = np.empty(horizons)
    h_rmse = np.empty(horizons)
    for h in range(horizons):
        m = None if mask is None else mask[:, h]
        h_mae[h] = mae(pred[:, h], target[:, h], m)
        h_mape[h] = mape(pred[:, h], target[:, h], epsilon_mask, m)
        h_rmse[h] = rmse(pred[:, h], target[:, h], m)
    kept = np.abs(target) > epsilon_mask
    if mask is not None:
        kept &= mask
    return EvalReport(
        horizon_mae=h_mae, horizon_mape=h_mape, horizon_rmse=h_rmse,
        overall_mae=mae(pred, target, mask),
        overall_mape=mape(pred, target, epsilon_mask, mask),
        overall_rmse=rmse(pred, target, mask),
        sample_count=target.shape[0],
        masked_out=int(target.size - np.count_nonzero(kept)),
    )


def evaluate(params: dict, samples: SampleSet, adj: np.ndarray,
             normalizer: Normalizer, config: ModelConfig,
             epsilon_mask: float = 0.0, batch_size: int = 256,
             predict_fn=None, mask=None) -> EvalReport:
    """Run the model over a sample set and report de-normalized metrics.

    `predict_fn(inputs) -> predictions` overrides the model (test hook).
    """
    from .training import predict  # local import, no module cycle

    if predict_fn is None:
        pred = predict(params, samples.inputs, adj, config, normalizer,
                       batch_size=batch_size)
    else:
        pred = predict_fn(samples.inputs)
    return build_report(np.asarray(pred), samples.targets, epsilon_mask, mask)
