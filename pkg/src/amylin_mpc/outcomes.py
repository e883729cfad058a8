"""Glycemic outcome metrics computed from a CGM trace."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

VERY_LOW, LOW, HIGH, VERY_HIGH = 54.0, 70.0, 180.0, 250.0


@dataclass
class OutcomeSummary:
    pct_very_low: float = 0.0
    pct_low: float = 0.0
    pct_tir: float = 0.0
    pct_high: float = 0.0
    pct_very_high: float = 0.0
    lbgi: float = 0.0
    hbgi: float = 0.0
    mean_cgm: float = 0.0
    low_events_per_day: float = 0.0
    total_daily_insulin: float = 0.0
    total_daily_pram: float = 0.0
    mdd_sensitivity: float = 0.0
    mdd_fp_per_day: float = 0.0
    mdd_units_per_day: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _trace(trace) -> np.ndarray:
    g = np.asarray(trace, dtype=float).ravel()
    if g.size == 0:
        raise ValueError("empty CGM trace")
    return g


def range_percents(trace) -> dict:
    """Percent of samples per glucose band; 70-180 mg/dL inclusive is in range."""
    g = _trace(trace)
    n = g.size
    low = np.count_nonzero(g < LOW)
    high = np.count_nonzero(g > HIGH)
    return {
        "pct_very_low": 100.0 * np.count_nonzero(g < VERY_LOW) / n,
        "pct_low": 100.0 * low / n,
        "pct_tir": 100.0 * (n - low - high) / n,
        "pct_high": 100.0 * high / n,
        "pct_very_high": 100.0 * np.count_nonzero(g > VERY_HIGH) / n,
    }


def risk_function(g):
    """Symmetrized glucose risk scale; zero near 112.5 mg/dL."""
    return 1.509 * (np.log(g) ** 1.084 - 5.381)


def bgi(trace) -> dict:
    """Low and high blood glucose indices."""
    g = _trace(trace)
    if np.any(g <= 0):
        raise ValueError("glucose values must be > 0 for the risk indices")
    f = risk_function(g)
    risk = 10.0 * f ** 2
    return {"lbgi": float(np.mean(np.where(f < 0, risk, 0.0))),
            "hbgi": float(np.mean(np.where(f > 0, risk, 0.0)))}


def low_events(trace, ts: float = 5.0, min_duration: float = 15.0,
               merge_gap: float = 30.0) -> float:
    """Hypoglycemic episodes per day.

    Runs below 70 mg/dL separated by less than ``merge_gap`` minutes of
    recovery are merged; an episode counts when it spans ``min_duration``.
    """
    g = _trace(trace)
    below = g < LOW
    runs = []
    start = None
    for j, b in enumerate(below):
        if b and start is None:
            start = j
        elif not b and start is not None:
            runs.append([start, j])
            start = None
    if start is not None:
        runs.append([start, len(g)])
    merged = []
    for r in runs:
        if merged and (r[0] - merged[-1][1]) * ts < merge_gap:
            merged[-1][1] = r[1]
        else:
            merged.append(r)
    n_events = sum((end - begin) * ts >= min_duration for begin, end in merged)
    days = len(g) * ts / 1440.0
    return n_events / days


def summarize(cgm, ts: float = 5.0, insulin_total: float = 0.0, pram_total: float = 0.0,
              mdd: dict | None = None) -> OutcomeSummary:
    """Build an :class:`OutcomeSummary` from a CGM trace and delivery totals."""
    g = _trace(cgm)
    days = len(g) * ts / 1440.0
    out = OutcomeSummary(**range_percents(g), **bgi(g))
    out.mean_cgm = float(np.mean(g))
    out.low_events_per_day = low_events(g, ts)
    out.total_daily_insulin = insulin_total / days
    out.total_daily_pram = pram_total / days
    if mdd:
        out.mdd_sensitivity = mdd["sensitivity"]
        out.mdd_fp_per_day = mdd["fp_per_day"]
        out.mdd_units_per_day = mdd["units_per_day"]
    if not math.isclose(out.pct_low + out.pct_tir + out.pct_high, 100.0, abs_tol=1e-9):
        raise AssertionError("range percentages do not partition the trace")
    return out
