"""Meal detection and dosing from CGM alone.

A slope rule stands in for a learned detector: a meal is flagged when the
sample-to-sample CGM rise stays above a threshold for a full window and the
total rise over that window is large enough. The carbohydrate estimate is
proportional to that rise, and the resulting bolus passes a safety cap that
keeps the projected glucose at or above 70 mg/dL.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

HYPO_FLOOR = 70.0


@dataclass(frozen=True)
class MealDetection:
    time: float
    estimated_carbs: float
    confidence: float

    def __post_init__(self):
        if self.estimated_carbs < 0:
            raise ValueError("estimated_carbs must be >= 0")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class MddConfig:
    """Detector and dosing settings.

    slope_threshold : mg/dL per sample (5 min)
    window, refractory, detection_window_tp, ts : minutes
    rise_factor : required window rise, as a multiple of
        ``slope_threshold * window / ts``
    carb_gain : grams estimated per mg/dL of window rise
    carb_ratio : g/U
    cf_per_carb_ratio : correction factor (mg/dL per U) per unit carb ratio
    max_bolus : U
    """

    slope_threshold: float = 2.0
    window: float = 15.0
    refractory: float = 90.0
    rise_factor: float = 1.0
    carb_gain: float = 2.8
    carb_ratio: float = 10.0
    cf_per_carb_ratio: float = 5.0
    max_bolus: float = 15.0
    detection_window_tp: float = 45.0
    ts: float = 5.0
    enabled: bool = True

    def __post_init__(self):
        for name in ("slope_threshold", "window", "refractory", "rise_factor",
                     "carb_gain", "carb_ratio", "cf_per_carb_ratio", "max_bolus",
                     "detection_window_tp", "ts"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def n_window(self) -> int:
        return max(int(round(self.window / self.ts)), 1)

    @property
    def correction_factor(self) -> float:
        return self.carb_ratio * self.cf_per_carb_ratio

    def with_(self, **changes) -> "MddConfig":
        return replace(self, **changes)


def _fires(g: np.ndarray, cfg: MddConfig) -> tuple[bool, float]:
    n = cfg.n_window
    if len(g) < n + 1:
        return False, 0.0
    tail = g[-(n + 1):]
    slopes = np.diff(tail)
    rise = float(tail[-1] - tail[0])
    ok = bool(np.all(slopes > cfg.slope_threshold)) and \
        rise > cfg.rise_factor * cfg.slope_threshold * n
    return ok, rise


def _detection(t: float, rise: float, cfg: MddConfig) -> MealDetection:
    conf = min(1.0, rise / (2.0 * cfg.rise_factor * cfg.slope_threshold * cfg.n_window))
    return MealDetection(time=float(t), estimated_carbs=cfg.carb_gain * rise,
                         confidence=conf)


def detect_meals(times: Sequence[float], cgm: Sequence[float],
                 cfg: MddConfig | None = None) -> list[MealDetection]:
    """Scan a whole CGM history and return every detection in order."""
    cfg = cfg or MddConfig()
    times = np.asarray(times, float)
    cgm = np.asarray(cgm, float)
    if times.shape != cgm.shape:
        raise ValueError("times and cgm must have the same length")
    out: list[MealDetection] = []
    last = -np.inf
    for j in range(len(cgm)):
        if times[j] - last < cfg.refractory:
            continue
        ok, rise = _fires(cgm[:j + 1], cfg)
        if ok:
            out.append(_detection(times[j], rise, cfg))
            last = times[j]
    return out


def detect_meal(times: Sequence[float], cgm: Sequence[float],
                cfg: MddConfig | None = None) -> MealDetection | None:
    """Detection at the newest sample of ``cgm``, or ``None``.

    Earlier detections in the same history are honored for the refractory
    period, so this agrees with :func:`detect_meals` sample by sample.
    """
    found = detect_meals(times, cgm, cfg)
    if found and found[-1].time == float(np.asarray(times)[-1]):
        return found[-1]
    return None


class MealDetector:
    """Online form of :func:`detect_meals`, fed one CGM sample at a time."""

    def __init__(self, cfg: MddConfig | None = None):
        self.cfg = cfg or MddConfig()
        self._buf: list[float] = []
        self._last = -np.inf
        self.detections: list[MealDetection] = []

    def update(self, t: float, glucose: float) -> MealDetection | None:
        self._buf.append(float(glucose))
        keep = self.cfg.n_window + 1
        if len(self._buf) > keep:
            del self._buf[:-keep]
        if t - self._last < self.cfg.refractory:
            return None
        ok, rise = _fires(np.asarray(self._buf), self.cfg)
        if not ok:
            return None
        det = _detection(t, rise, self.cfg)
        self._last = t
        self.detections.append(det)
        return det


def safety_limit(candidate: float, current_glucose: float, carb_ratio: float,
                 correction_factor: float | None = None) -> float:
    """Cap a bolus so that, by the correction factor, glucose stays >= 70 mg/dL.

    Without an explicit correction factor, ``5 * carb_ratio`` mg/dL per U is used.
    """
    if candidate < 0:
        raise ValueError("candidate bolus must be >= 0")
    cf = carb_ratio * 5.0 if correction_factor is None else correction_factor
    cap = max(0.0, (current_glucose - HYPO_FLOOR) / cf)
    return min(candidate, cap)


def dose_for_meal(det: MealDetection, current_glucose: float,
                  cfg: MddConfig | None = None) -> float:
    """Insulin bolus (U) for a detected meal, after the safety cap."""
    cfg = cfg or MddConfig()
    candidate = min(det.estimated_carbs / cfg.carb_ratio, cfg.max_bolus)
    return safety_limit(candidate, current_glucose, cfg.carb_ratio,
                        cfg.correction_factor)


def mdd_stats(detection_times: Sequence[float], meal_times: Sequence[float],
              duration_days: float, mdd_units: float = 0.0,
              window: float = 45.0) -> dict:
    """Sensitivity, false positives per day and MDD insulin per day.

    A meal counts as detected if some detection falls within ``window``
    minutes after it (inclusive). A detection that is not within ``window``
    minutes after any meal is a false positive.
    """
    if duration_days <= 0:
        raise ValueError("duration_days must be > 0")
    det = np.asarray(sorted(detection_times), float)
    meals = np.asarray(sorted(meal_times), float)

    def _within(later, earlier):
        dt = later - earlier
        return bool(np.any((dt >= 0) & (dt <= window)))

    hits = sum(_within(det, m) for m in meals)
    fps = sum(not _within(d, meals) for d in det)
    return {
        "sensitivity": hits / len(meals) if len(meals) else 0.0,
        "fp_per_day": fps / duration_days,
        "units_per_day": mdd_units / duration_days,
    }
