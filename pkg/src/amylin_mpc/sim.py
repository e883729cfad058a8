"""Closed-loop simulation: patient model, CGM, meal detection and MPC.

The loop runs on the controller's sampling grid (5 min). Each period the CGM
is read, the meal detector may trigger a bolus, the controller computes the
quantized delivery, and the patient model is integrated over the period with
1-minute RK4 steps. Meals are unannounced: they enter the gut compartment at
their scheduled minute and the controller only ever sees their effect on the
patient state.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import MpcConfig, MpcController, Policy
from .mdd import MddConfig, MealDetector, dose_for_meal, mdd_stats
from .model import (M1, Q1, IntegrationError, ModelParams, _rk4, basal_for_target,
                    insulin_from_model, insulin_to_model, pram_to_model,
                    steady_state)
from .outcomes import OutcomeSummary, summarize

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("time_min", "cgm", "glucose_true", "insulin_u", "pram_mcg",
                 "insulin_bolus_u", "pram_bolus_mcg", "meal_g", "detection", "fallback")

# parameters scaled per virtual patient
COHORT_SCALED = ("p1", "p2", "p3", "k21", "k12", "ka", "ke", "kp2p1", "kp3p2",
                 "ke2p2", "ke3p3", "sfp1", "sfp2")
COHORT_FACTOR = (0.75, 1.33)
COHORT_WEIGHT = (50.0, 100.0)

TABLE3_ARMS = ("insulin_only", "fixed_ratio_unaware", "fixed_ratio_aware", "independent")
BASAL_MULTIPLIERS = (2, 4, 6, 8, 10)


class SimulationError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"simulation failed at step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass
class Scenario:
    """One closed-loop run.

    meals are ``(time_min, carbs_g)`` pairs measured from the start.
    ``declared_basal`` (U/hr) seeds the 24 h insulin average; by default the
    basal that holds the controller target.
    """

    patient: ModelParams = field(default_factory=ModelParams)
    meals: list = field(default_factory=list)
    duration_days: float = 1.0
    mpc: MpcConfig = field(default_factory=MpcConfig)
    mdd: MddConfig = field(default_factory=MddConfig)
    seed: int = 0
    cgm_noise_sd: float = 0.0
    declared_basal: float | None = None

    def __post_init__(self):
        self.meals = [(float(t), float(c)) for t, c in self.meals]
        self.validate()

    @property
    def duration_min(self) -> float:
        return self.duration_days * 1440.0

    @property
    def n_steps(self) -> int:
        return int(round(self.duration_min / self.mpc.ts))

    def validate(self):
        if not self.duration_days > 0:
            raise ValueError("duration_days must be > 0")
        if self.cgm_noise_sd < 0:
            raise ValueError("cgm_noise_sd must be >= 0")
        for j, (t, c) in enumerate(self.meals):
            if not 0 <= t < self.duration_min:
                raise ValueError(f"meal {j}: time {t} min is outside the scenario "
                                 f"duration of {self.duration_min:g} min")
            if c < 0:
                raise ValueError(f"meal {j}: carbs must be >= 0")

    def with_policy(self, policy, multiplier: float = 0.0, **mpc_changes) -> "Scenario":
        mpc = self.mpc.with_(policy=Policy(policy), basal_multiplier=multiplier,
                             **mpc_changes)
        return replace(self, mpc=mpc)


@dataclass
class SimTrace:
    """Per-step log; arrays share the length of ``time``."""

    time: np.ndarray
    cgm: np.ndarray
    glucose_true: np.ndarray
    insulin_u: np.ndarray
    pram_mcg: np.ndarray
    insulin_bolus_u: np.ndarray
    pram_bolus_mcg: np.ndarray
    meal_g: np.ndarray
    detection: np.ndarray
    fallback: np.ndarray
    detection_carbs: list = field(default_factory=list)

    def columns(self) -> dict:
        return {"time_min": self.time, "cgm": self.cgm,
                "glucose_true": self.glucose_true, "insulin_u": self.insulin_u,
                "pram_mcg": self.pram_mcg, "insulin_bolus_u": self.insulin_bolus_u,
                "pram_bolus_mcg": self.pram_bolus_mcg, "meal_g": self.meal_g,
                "detection": self.detection, "fallback": self.fallback}


def initial_state(params: ModelParams, mpc: MpcConfig) -> np.ndarray:
    """Steady state under the arm's basal delivery, no food on board."""
    u_i = basal_for_target(params, mpc.target)
    basal = insulin_from_model(u_i, params.weight)
    if mpc.policy.fixed_ratio:
        pram = mpc.pram_ratio * basal
    elif mpc.policy is Policy.BASAL_PRAM:
        pram = mpc.basal_multiplier * basal
    else:
        pram = 0.0
    return steady_state(params, u_i, pram_to_model(pram, params.weight)).to_array()


def run_scenario(scn: Scenario) -> tuple[SimTrace, OutcomeSummary]:
    """Run one closed loop; deterministic for a given scenario and seed."""
    p = scn.patient
    cfg = scn.mpc
    ts = cfg.ts
    n = scn.n_steps
    rng = np.random.default_rng(scn.seed)
    ctl = MpcController(p, cfg, declared_basal=scn.declared_basal)
    detector = MealDetector(scn.mdd)
    k_carb = p.k_carb

    meals_by_minute: dict[int, float] = {}
    for t, c in scn.meals:
        key = int(round(t))
        meals_by_minute[key] = meals_by_minute.get(key, 0.0) + c

    cols = {name: np.zeros(n) for name in TRACE_COLUMNS}
    x = initial_state(p, cfg).tolist()
    det_carbs = []
    sub = int(round(ts))
    for k in range(n):
        t = k * ts
        try:
            g_true = x[Q1] / p.vd_g
            cgm = g_true + (rng.normal(0.0, scn.cgm_noise_sd) if scn.cgm_noise_sd else 0.0)
            bolus = 0.0
            det = detector.update(t, cgm) if scn.mdd.enabled else None
            if det is not None:
                bolus = dose_for_meal(det, cgm, scn.mdd)
                det_carbs.append(det.estimated_carbs)
            cmd = ctl.step(x, bolus)
            ins = cmd.insulin_amount(ts)
            pram = cmd.pram_amount(ts)
            u_i = insulin_to_model(ins * 60.0 / ts, p.weight)
            u_p = pram_to_model(pram * 60.0 / ts, p.weight)
            eaten = 0.0
            for minute in range(sub):
                c = meals_by_minute.get(int(t) + minute)
                if c:
                    x[M1] += c
                    eaten += c
                x = _rk4(x, u_i, u_p, 0.0, p, k_carb, 1.0)
            if not all(math.isfinite(v) for v in x):
                raise IntegrationError("non-finite state")
        except Exception as exc:  # abort with the failing step index
            raise SimulationError(k, exc) from exc
        cols["time_min"][k] = t
        cols["cgm"][k] = cgm
        cols["glucose_true"][k] = g_true
        cols["insulin_u"][k] = ins
        cols["pram_mcg"][k] = pram
        cols["insulin_bolus_u"][k] = cmd.insulin_bolus
        cols["pram_bolus_mcg"][k] = cmd.pram_bolus
        cols["meal_g"][k] = eaten
        cols["detection"][k] = det is not None
        cols["fallback"][k] = cmd.fallback

    trace = SimTrace(time=cols["time_min"], cgm=cols["cgm"],
                     glucose_true=cols["glucose_true"], insulin_u=cols["insulin_u"],
                     pram_mcg=cols["pram_mcg"], insulin_bolus_u=cols["insulin_bolus_u"],
                     pram_bolus_mcg=cols["pram_bolus_mcg"], meal_g=cols["meal_g"],
                     detection=cols["detection"].astype(bool),
                     fallback=cols["fallback"].astype(bool), detection_carbs=det_carbs)
    stats = mdd_stats(trace.time[trace.detection], [t for t, c in scn.meals if c > 0],
                      scn.duration_days, float(trace.insulin_bolus_u.sum()),
                      scn.mdd.detection_window_tp)
    summary = summarize(trace.cgm, ts, float(trace.insulin_u.sum()),
                        float(trace.pram_mcg.sum()), stats)
    return trace, summary


# ---------------------------------------------------------------- cohorts

def generate_cohort(n: int, seed: int = 0, base: ModelParams | None = None) -> list[ModelParams]:
    """Synthetic patients: rate and sensitivity parameters scaled log-uniformly.

    Each parameter in ``COHORT_SCALED`` is multiplied by an independent factor
    ``exp(U(log 0.75, log 1.33))``; body weight is uniform on [50, 100] kg.
    """
    if n < 1:
        raise ValueError("cohort size must be >= 1")
    base = base or ModelParams()
    rng = np.random.default_rng(seed)
    lo, hi = np.log(COHORT_FACTOR)
    out = []
    for _ in range(n):
        factors = np.exp(rng.uniform(lo, hi, size=len(COHORT_SCALED)))
        changes = {name: getattr(base, name) * f for name, f in zip(COHORT_SCALED, factors)}
        changes["weight"] = float(rng.uniform(*COHORT_WEIGHT))
        out.append(base.with_(**changes))
    return out


MEAL_SLOTS = ((7 * 60, 30.0, 70.0), (12 * 60 + 30, 40.0, 80.0), (18 * 60 + 30, 50.0, 90.0))


def default_meal_schedule(duration_days: float, seed: int = 0,
                          scale: float = 1.0) -> list[tuple[float, float]]:
    """Three unannounced meals a day with jittered times and sizes.

    Breakfast, lunch and dinner start within 45 min of 07:00, 12:30 and 18:30;
    sizes are uniform on 30-70, 40-80 and 50-90 g times ``scale``, rounded
    to whole grams.
    """
    if not scale > 0:
        raise ValueError("meal scale must be > 0")
    rng = np.random.default_rng(seed)
    meals = []
    for day in range(int(math.ceil(duration_days))):
        for center, lo, hi in MEAL_SLOTS:
            t = day * 1440 + center + float(rng.integers(-45, 46))
            if t < duration_days * 1440:
                meals.append((t, float(round(rng.uniform(lo * scale, hi * scale)))))
    return meals


def arm_config(arm: str, base: MpcConfig) -> MpcConfig:
    """Controller settings for a named arm (one of ``TABLE3_ARMS`` or ``basal_<m>``)."""
    if arm.startswith("basal_"):
        return base.with_(policy=Policy.BASAL_PRAM, basal_multiplier=float(arm[6:]),
                          pram_aware=None)
    return base.with_(policy=Policy(arm), pram_aware=None, basal_multiplier=0.0)


def _run_one(job):
    idx, arm, scn = job
    try:
        _, summary = run_scenario(scn)
        return idx, arm, summary, None
    except SimulationError as exc:
        return idx, arm, None, str(exc)


def run_arms(cohort: list[ModelParams], schedules: list[list], duration_days: float,
             mpc: MpcConfig | None = None, mdd: MddConfig | None = None,
             arms=None, threads: int = 1, seed: int = 0) -> dict:
    """Run every arm on every patient with identical meals.

    ``schedules[i]`` is patient i's meal list. Returns
    ``{arm: {"summaries": [...], "failures": int, "errors": [...]}}`` with
    summaries ordered by patient index.
    """
    if not cohort:
        raise ValueError("cohort must contain at least one patient")
    if len(schedules) != len(cohort):
        raise ValueError("need one meal schedule per patient")
    mpc = mpc or MpcConfig()
    mdd = mdd or MddConfig()
    arms = list(arms or (TABLE3_ARMS + tuple(f"basal_{m}" for m in BASAL_MULTIPLIERS)))
    jobs = []
    for arm in arms:
        cfg = arm_config(arm, mpc)
        for i, (pat, meals) in enumerate(zip(cohort, schedules)):
            jobs.append((i, arm, Scenario(patient=pat, meals=meals,
                                          duration_days=duration_days, mpc=cfg,
                                          mdd=mdd, seed=seed + i)))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    out = {arm: {"summaries": [], "failures": 0, "errors": []} for arm in arms}
    for idx, arm, summary, err in sorted(results, key=lambda r: (arms.index(r[1]), r[0])):
        if err is None:
            out[arm]["summaries"].append(summary)
        else:
            log.warning("patient %d, arm %s excluded: %s", idx, arm, err)
            out[arm]["failures"] += 1
            out[arm]["errors"].append(err)
    return out


def aggregate(summaries: list[OutcomeSummary]) -> dict:
    """Mean and sample SD of each outcome field (SD is 0 for one patient)."""
    out = {}
    for name in OutcomeSummary.field_names():
        vals = np.array([getattr(s, name) for s in summaries], float)
        if vals.size == 0:
            out[name] = (math.nan, math.nan)
        else:
            sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            out[name] = (float(np.mean(vals)), sd)
    return out
