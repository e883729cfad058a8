"""File formats: scenario and cohort JSON, traces, summaries and arm tables.

Scenario JSON mirrors :class:`~amylin_mpc.sim.Scenario`::

    {
      "duration_days": 3,
      "seed": 1,
      "meals": [[420, 50], [750, 60]],
      "patient": {"weight": 80},
      "mpc": {"policy": "fixed_ratio_aware", "target": 110},
      "mdd": {"enabled": true}
    }

Every key is optional. Meals may also be objects with ``time_min`` and
``carbs_g``. A top-level ``policy`` is shorthand for ``mpc.policy``.
Overrides are ``dotted.key=value`` strings; the value is parsed as JSON when
possible and used as a bare string otherwise.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .controller import MpcConfig, Policy
from .mdd import MddConfig
from .model import ModelParams
from .outcomes import OutcomeSummary
from .sim import (BASAL_MULTIPLIERS, TABLE3_ARMS, TRACE_COLUMNS, Scenario, SimTrace,
                  aggregate, default_meal_schedule)

SCENARIO_KEYS = ("patient", "meals", "duration_days", "policy", "mpc", "mdd", "seed",
                 "cgm_noise_sd", "declared_basal")
COHORT_KEYS = ("n_patients", "duration_days", "seed", "meal_scale", "arms", "patient",
               "mpc", "mdd")

# (label, summary field) in report row order
TABLE_ROWS = (
    ("Very low (<54 mg/dL)", "pct_very_low"),
    ("Low (<70 mg/dL)", "pct_low"),
    ("In range (70-180 mg/dL)", "pct_tir"),
    ("High (>180 mg/dL)", "pct_high"),
    ("Very high (>250 mg/dL)", "pct_very_high"),
    ("LBGI", "lbgi"),
    ("HBGI", "hbgi"),
    ("Mean CGM", "mean_cgm"),
    ("Low Events / Day", "low_events_per_day"),
    ("Total daily insulin (U)", "total_daily_insulin"),
    ("Total daily pram (mcg)", "total_daily_pram"),
    ("MDD Sensitivity", "mdd_sensitivity"),
    ("MDD FP/day", "mdd_fp_per_day"),
    ("MDD Units/day", "mdd_units_per_day"),
)

ARM_LABELS = {
    "insulin_only": "Insulin only",
    "fixed_ratio_unaware": "Ins + pram 6:1 fixed ratio, pram unaware",
    "fixed_ratio_aware": "Ins + pram 6:1 fixed ratio, pram aware",
    "independent": "Ins + pram independent control",
}
TABLE4_ARMS = ("insulin_only",) + tuple(f"basal_{m}" for m in BASAL_MULTIPLIERS)


class ConfigError(ValueError):
    """Invalid scenario, cohort or override; the message names the key."""


def arm_label(arm: str) -> str:
    if arm.startswith("basal_"):
        return f"Basal pram {arm[6:]} mcg/hr x basal IIR"
    return ARM_LABELS.get(arm, arm)


# ---------------------------------------------------------------- JSON input

def load_json(path) -> dict:
    """Read a JSON object, reporting decode errors with line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def parse_override(text: str) -> tuple[list[str], object]:
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key or any(not part for part in key.split(".")):
        raise ConfigError(f"override {text!r} is not of the form dotted.key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(data: dict, overrides) -> dict:
    """Return a copy of ``data`` with each ``key=value`` override set.

    Missing intermediate objects are created; whether the final key is
    legal is decided later, when the dictionary is built into objects.
    """
    out = json.loads(json.dumps(data))
    for text in overrides or ():
        path, value = parse_override(text)
        node = out
        for depth, part in enumerate(path[:-1]):
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override {text!r}: "
                                  f"{'.'.join(path[:depth + 1])} is not an object")
            node = child
        node[path[-1]] = value
    return out


def _build(cls, data, where: str, extra: dict | None = None):
    """Instantiate a dataclass, rejecting unknown keys by their dotted name."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key {where}.{key}")
    kwargs = dict(data)
    kwargs.update(extra or {})
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _check_keys(data: dict, allowed, what: str):
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {what}")


def _meals(raw) -> list[tuple[float, float]]:
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ConfigError("meals must be a list")
    out = []
    for j, item in enumerate(raw):
        if isinstance(item, dict):
            _check_keys(item, ("time_min", "carbs_g"), f"meal {j}")
            pair = (item.get("time_min"), item.get("carbs_g"))
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            pair = tuple(item)
        else:
            raise ConfigError(f"meal {j}: expected [time_min, carbs_g]")
        try:
            t, c = float(pair[0]), float(pair[1])
        except (TypeError, ValueError):
            raise ConfigError(f"meal {j}: time and carbs must be numbers") from None
        if not (math.isfinite(t) and math.isfinite(c)):
            raise ConfigError(f"meal {j}: time and carbs must be finite")
        out.append((t, c))
    return out


def _mpc(data, policy=None) -> MpcConfig:
    data = dict(data or {})
    if policy is not None:
        data["policy"] = policy
    if "policy" in data:
        try:
            data["policy"] = Policy(data["policy"])
        except ValueError:
            allowed = ", ".join(p.value for p in Policy)
            raise ConfigError(f"mpc.policy: unknown policy {data['policy']!r} "
                              f"(expected one of {allowed})") from None
    return _build(MpcConfig, data, "mpc")


def scenario_from_dict(data: dict) -> Scenario:
    _check_keys(data, SCENARIO_KEYS, "scenario")
    patient = _build(ModelParams, data.get("patient"), "patient")
    mpc = _mpc(data.get("mpc"), data.get("policy"))
    mdd = _build(MddConfig, data.get("mdd"), "mdd")
    meals = _meals(data.get("meals"))
    kwargs = {k: data[k] for k in ("duration_days", "seed", "cgm_noise_sd",
                                   "declared_basal") if k in data}
    try:
        return Scenario(patient=patient, meals=meals, mpc=mpc, mdd=mdd, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path, overrides=()) -> Scenario:
    return scenario_from_dict(apply_overrides(load_json(path), overrides))


@dataclasses.dataclass
class CohortSpec:
    """Arm comparison setup: synthetic cohort plus shared controller settings."""

    n_patients: int = 25
    duration_days: float = 3.0
    seed: int = 0
    meal_scale: float = 1.0
    arms: tuple = TABLE3_ARMS + tuple(f"basal_{m}" for m in BASAL_MULTIPLIERS)
    patient: ModelParams = dataclasses.field(default_factory=ModelParams)
    mpc: MpcConfig = dataclasses.field(default_factory=MpcConfig)
    mdd: MddConfig = dataclasses.field(default_factory=MddConfig)

    def __post_init__(self):
        if int(self.n_patients) != self.n_patients or self.n_patients < 1:
            raise ConfigError("n_patients must be a positive integer")
        self.n_patients = int(self.n_patients)
        if not self.duration_days > 0:
            raise ConfigError("duration_days must be > 0")
        if not self.meal_scale > 0:
            raise ConfigError("meal_scale must be > 0")
        self.arms = tuple(self.arms)
        for arm in self.arms:
            if arm.startswith("basal_"):
                try:
                    ok = float(arm[6:]) >= 0
                except ValueError:
                    ok = False
            else:
                ok = arm in TABLE3_ARMS
            if not ok:
                raise ConfigError(f"arms: unknown arm {arm!r}")

    def schedules(self) -> list[list]:
        return [default_meal_schedule(self.duration_days, seed=self.seed + 1000 + i,
                                      scale=self.meal_scale)
                for i in range(self.n_patients)]


def cohort_from_dict(data: dict) -> CohortSpec:
    _check_keys(data, COHORT_KEYS, "cohort spec")
    kwargs = {k: data[k] for k in ("n_patients", "duration_days", "seed", "meal_scale",
                                   "arms") if k in data}
    kwargs["patient"] = _build(ModelParams, data.get("patient"), "patient")
    kwargs["mpc"] = _mpc(data.get("mpc"))
    kwargs["mdd"] = _build(MddConfig, data.get("mdd"), "mdd")
    try:
        return CohortSpec(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_cohort(path=None, overrides=()) -> CohortSpec:
    data = load_json(path) if path is not None else {}
    return cohort_from_dict(apply_overrides(data, overrides))


# ---------------------------------------------------------------- output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return repr(float(v))


def write_trace(trace: SimTrace, path):
    """CSV with the trace columns in declared order; floats use ``repr``."""
    cols = trace.columns()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k in range(len(trace.time)):
            w.writerow([_fmt(cols[name][k]) for name in TRACE_COLUMNS])


def read_trace(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array(body, float).reshape(len(body), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}


def write_summary(summary: OutcomeSummary, path):
    Path(path).write_text(summary.to_json() + "\n")


def arm_table(results: dict, arms) -> list[list[str]]:
    """Rows of ``metric, arm1, arm2, ...`` with ``mean (sd)`` cells."""
    arms = [a for a in arms if a in results]
    stats = {a: aggregate(results[a]["summaries"]) for a in arms}
    rows = [["Metric"] + [arm_label(a) for a in arms]]
    for label, name in TABLE_ROWS:
        rows.append([label] + [f"{stats[a][name][0]:.2f} ({stats[a][name][1]:.2f})"
                               for a in arms])
    rows.append(["Patients excluded"] + [str(results[a]["failures"]) for a in arms])
    return rows


def write_table(rows, path):
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def markdown_report(spec: CohortSpec, results: dict) -> str:
    lines = [
        "# Arm comparison",
        "",
        f"Synthetic cohort of {spec.n_patients} patients (seed {spec.seed}), "
        f"{spec.duration_days:g}-day unannounced-meal scenarios, meal scale "
        f"{spec.meal_scale:g}. Cells are mean (SD) over patients.",
        "",
    ]
    for title, arms in (("Delivery policies", TABLE3_ARMS), ("Basal pramlintide", TABLE4_ARMS)):
        rows = arm_table(results, arms)
        if len(rows[0]) < 2:
            continue
        lines += [f"## {title}", "", "| " + " | ".join(rows[0]) + " |",
                  "|" + "---|" * len(rows[0])]
        lines += ["| " + " | ".join(r) + " |" for r in rows[1:]]
        lines.append("")
    return "\n".join(lines)
