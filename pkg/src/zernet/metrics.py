"""Per-vertex regression metrics: MAPE, Pearson correlation, hit rate."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

TRUTH_FLOOR = 1e-12


class UndefinedMetricError(ValueError):
    pass


def _percentage_errors(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    if truth.size == 0:
        raise UndefinedMetricError("empty input")
    # near-zero truth values make percentage errors meaningless
    keep = np.abs(truth) > TRUTH_FLOOR * np.abs(truth).max()
    if not keep.any():
        raise UndefinedMetricError("every truth entry is below the near-zero floor")
    return 100.0 * np.abs(pred[keep] - truth[keep]) / np.abs(truth[keep])


def mape(pred, truth) -> float:
    return float(_percentage_errors(pred, truth).mean())


def hit_rate(pred, truth, threshold: float) -> float:
    """Percentage of entries whose absolute percentage error is <= ``threshold``."""
    err = _percentage_errors(pred, truth)
    return float(100.0 * np.count_nonzero(err <= threshold) / err.size)


def pcc(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    dp = pred - pred.mean()
    dt = truth - truth.mean()
    sp, st = np.sqrt(dp @ dp), np.sqrt(dt @ dt)
    if sp == 0.0 or st == 0.0:
        raise UndefinedMetricError("Pearson correlation undefined for zero variance")
    return float(np.clip((dp @ dt) / (sp * st), -1.0, 1.0))


@dataclass
class EvalReport:
    mape: float
    pcc: float
    hit_rates: dict = field(default_factory=dict)  # threshold (percent) -> HR (percent)
    name: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hit_rates"] = {f"{k:g}": v for k, v in self.hit_rates.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(pred, truth, thresholds=(10.0, 20.0), name: str = "") -> EvalReport:
    return EvalReport(
        mape=mape(pred, truth),
        pcc=pcc(pred, truth),
        hit_rates={float(t): hit_rate(pred, truth, t) for t in thresholds},
        name=name,
    )


def format_reports(reports) -> str:
    """Aligned plain-text table, one row per report."""
    reports = list(reports)
    thresholds = sorted({t for r in reports for t in r.hit_rates})
    header = ["model", "MAPE", "PCC"] + [f"HR({t:g}%)" for t in thresholds]
    rows = [header]
    for r in reports:
        rows.append([r.name or "-", f"{r.mape:.2f}%", f"{r.pcc:.3f}"]
                    + [f"{r.hit_rates.get(t, float('nan')):.2f}%" for t in thresholds])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in rows]
    return "\n".join(lines)
