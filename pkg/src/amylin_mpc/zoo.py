"""Candidate PK/PD model structures and a bounded least-squares fitting toolkit.

Three families are covered:

* insulin PK, variants 1-6 (plasma insulin observable),
* pramlintide PK, variants 1-6 (intact and metabolite observables),
* glucoregulatory PD, variants 1-8 (plasma glucose observable).

Fitting minimizes the mean squared error between simulated observables and
data by multi-start Nelder-Mead in log-parameter space, clipped to bounds.
Because all priors of interest are uniform on intervals, the best fit is the
constrained maximum-likelihood estimate under Gaussian noise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import odeint
from scipy.linalg import expm
from scipy.optimize import minimize
from scipy.stats import ttest_rel

from .model import ModelParams

K_M = 62.6  # mU
V_MAX = 1.93  # mU/min
ALPHA = 1000.0 / 180.0  # mmol/g
RENAL_THRESHOLD = 162.0 / 18.0  # mmol/L
F01C_KNEE = 4.5  # mmol/L; non-insulin uptake falls linearly below this
MGDL_PER_MMOL = 18.0


class Family(str, Enum):
    INSULIN_PK = "insulin_pk"
    PRAM_PK = "pram_pk"
    GLUCO_PD = "gluco_pd"


N_VARIANTS = {Family.INSULIN_PK: 6, Family.PRAM_PK: 6, Family.GLUCO_PD: 8}


class StructureError(ValueError):
    """State or parameter vector does not match the model structure."""


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class Experiment:
    """Doses given at t = 0 and the subject's body mass.

    insulin : U; pram : mcg; carbs : g; weight : kg.
    ``insulin_profile`` and ``pram_profile`` drive the PD models; each maps a
    time array (min) to plasma insulin (mU/L) and plasma pramlintide (pg/mL).
    When left as ``None`` they are generated from the default PK parameters.
    """

    insulin: float = 7.5
    pram: float = 45.0
    carbs: float = 88.0
    weight: float = 70.0
    insulin_profile: Callable | None = None
    pram_profile: Callable | None = None


# ---------------------------------------------------------------- structures

@dataclass(frozen=True)
class CandidateModel:
    """One candidate structure.

    ``names`` lists the free parameters; ``bounds`` gives a closed interval
    for each; ``fixed`` holds constants; ``ties`` maps a parameter that is
    not free to the free parameter it equals.
    """

    family: Family
    variant: int
    names: tuple
    bounds: dict
    fixed: dict = field(default_factory=dict)
    ties: dict = field(default_factory=dict)
    n_states: int = 3
    observables: tuple = ()

    def __post_init__(self):
        if not 1 <= self.variant <= N_VARIANTS[self.family]:
            raise ValueError(f"{self.family.value} has no variant {self.variant}")
        for name in self.names:
            lo, hi = self.bounds[name]
            if not (np.isfinite(lo) and np.isfinite(hi) and 0 < lo < hi):
                raise ValueError(f"bad bounds for {name}: {(lo, hi)}")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.bounds[n][0] for n in self.names])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.bounds[n][1] for n in self.names])

    def full(self, theta) -> dict:
        """Free values, fixed constants and tied values as one mapping."""
        theta = np.asarray(theta, float)
        if theta.shape != (len(self.names),):
            raise StructureError(f"expected {len(self.names)} parameters, got {theta.shape}")
        out = dict(self.fixed)
        out.update(zip(self.names, theta))
        for name, src in self.ties.items():
            out[name] = out[src]
        return out


_RATE = (1e-4, 1.0)

_INSULIN = {
    1: dict(names=("k_i1", "k_e"), ties={"k_i2": "k_i1"}, ld=False),
    2: dict(names=("k_i1", "k_i2", "k_e"), ld=False),
    3: dict(names=("k_i1", "k_e"), ties={"k_i2": "k_i1"}, ld=True),
    4: dict(names=("k_i1", "k_i2", "k_e"), ld=True),
    5: dict(names=("k_i1", "k_i2", "k_e", "f_a"), ties={"k_i3": "k_i1"}, ld=True),
    6: dict(names=("k_i1", "k_i2", "k_i3", "k_e", "f_a"), ld=True),
}

_PRAM_PATHS = {  # (P1 -> P3, P2 -> P3, hidden compartments)
    1: (True, False, False), 2: (True, True, False), 3: (False, True, False),
    4: (True, False, True), 5: (True, True, True), 6: (False, True, True),
}


def _pd_spec(variant):
    names = ["k_s2s1", "k_g1g2", "s_t", "s_d", "egp", "k_r", "sf_p1"]
    ties, fixed = {}, {}
    if variant in (2, 4):
        names.append("k_g1s2")
    else:
        ties["k_g1s2"] = "k_s2s1"
    if variant in (1, 2):
        fixed["k_se"] = 0.001
    else:
        names.append("k_se")
    if variant <= 4:
        ties["sf_p2"] = "sf_p1"
    else:
        names.append("sf_p2")
    if variant in (6, 8):
        names.append("sf_se")
    else:
        fixed["sf_se"] = 0.0
    if variant in (7, 8):
        names.append("k_s1s0")
    return tuple(names), ties, fixed


_PD_BOUNDS = {
    "k_s2s1": (1e-3, 0.5), "k_g1s2": (1e-3, 0.5), "k_se": (1e-5, 0.05),
    "k_g1g2": (1e-3, 0.5), "s_t": (1e-5, 0.05), "s_d": (1e-5, 0.05),
    "egp": (1e-3, 0.1), "k_r": (1e-5, 0.1), "sf_p1": (1e-4, 1.0),
    "sf_p2": (1e-4, 1.0), "sf_se": (1e-4, 1.0), "k_s1s0": (1e-3, 0.5),
}

PD_FIXED = {"v_g": 0.16, "f01c": 0.0097}  # L/kg, mmol/kg/min


def candidate(family, variant: int) -> CandidateModel:
    """Build candidate ``variant`` of ``family`` with default bounds."""
    family = Family(family)
    if not 1 <= int(variant) <= N_VARIANTS[family]:
        raise ValueError(f"{family.value} has no variant {variant}")
    variant = int(variant)
    if family is Family.INSULIN_PK:
        spec = _INSULIN[variant]
        bounds = {n: ((0.05, 0.95) if n == "f_a" else _RATE) for n in spec["names"]}
        fixed = {"v_i": 0.12, "ld": float(spec["ld"]), "k_m": K_M, "v_max": V_MAX}
        n = 4 if variant >= 5 else 3
        return CandidateModel(family, variant, spec["names"], bounds, fixed,
                              spec.get("ties", {}), n, ("insulin",))
    if family is Family.PRAM_PK:
        p13, p23, hidden = _PRAM_PATHS[variant]
        names = ["kp2p1", "ke2p2", "ke3p3"]
        fixed = {"vp": ModelParams().vp, "kp3p1": 0.0, "kp3p2": 0.0,
                 "kp4p2": 0.0, "kp2p4": 0.0, "kp5p3": 0.0, "kp3p5": 0.0}
        if p13:
            names.append("kp3p1")
        if p23:
            names.append("kp3p2")
        if hidden:
            names += ["kp4p2", "kp2p4", "kp5p3", "kp3p5"]
        for nm in names:
            fixed.pop(nm, None)
        bounds = {nm: (1e-4, 2.0) for nm in names}
        return CandidateModel(family, variant, tuple(names), bounds, fixed, {},
                              5 if hidden else 3, ("intact", "metabolite"))
    names, ties, fixed = _pd_spec(variant)
    fixed.update(PD_FIXED)
    if variant not in (7, 8):
        fixed["k_s1s0"] = 1.0
    bounds = {nm: _PD_BOUNDS[nm] for nm in names}
    return CandidateModel(family, variant, names, bounds, fixed, ties,
                          5 if variant >= 7 else 4, ("glucose",))


def all_candidates() -> list[CandidateModel]:
    return [candidate(f, v) for f in Family for v in range(1, N_VARIANTS[f] + 1)]


# ---------------------------------------------------------------- dynamics

def _insulin_rhs(model, x, q, weight):
    km, vmax = q["k_m"] / weight, q["v_max"] / weight
    ld = q["ld"] > 0

    def degr(v):
        return vmax * v / (km + v) if ld else 0.0

    if model.variant <= 4:
        q1, q2, q3 = x
        return np.array([-q["k_i1"] * q1 - degr(q1),
                         q["k_i1"] * q1 - q["k_i2"] * q2,
                         q["k_i2"] * q2 - q["k_e"] * q3])
    q1a, q1b, q2, q3 = x
    return np.array([-q["k_i1"] * q1a - degr(q1a),
                     -q["k_i2"] * q1b - degr(q1b),
                     q["k_i1"] * q1a - q["k_i3"] * q2,
                     q["k_i3"] * q2 + q["k_i2"] * q1b - q["k_e"] * q3])


def insulin_matrix(model: CandidateModel, theta) -> np.ndarray:
    """System matrix of an insulin PK candidate without local degradation."""
    q = model.full(theta)
    if q["ld"]:
        raise StructureError("local degradation makes the model nonlinear")
    return np.array([[-q["k_i1"], 0.0, 0.0],
                     [q["k_i1"], -q["k_i2"], 0.0],
                     [0.0, q["k_i2"], -q["k_e"]]])


def pram_matrix(model: CandidateModel, theta) -> np.ndarray:
    """System matrix of a (linear) pramlintide PK candidate."""
    q = model.full(theta)
    n = model.n_states
    a = np.zeros((n, n))
    a[0, 0] = -q["kp2p1"] - q["kp3p1"]
    a[1, 0] = q["kp2p1"]
    a[2, 0] = q["kp3p1"]
    a[1, 1] = -q["kp3p2"] - q["ke2p2"]
    a[2, 1] = q["kp3p2"]
    a[2, 2] = -q["ke3p3"]
    if n == 5:
        a[1, 1] -= q["kp4p2"]
        a[1, 3] = q["kp2p4"]
        a[3, 1] = q["kp4p2"]
        a[3, 3] = -q["kp2p4"]
        a[2, 2] -= q["kp5p3"]
        a[2, 4] = q["kp3p5"]
        a[4, 2] = q["kp5p3"]
        a[4, 4] = -q["kp3p5"]
    return a


def _pram_rhs(model, x, q):
    # written out rather than ``pram_matrix @ x`` so model 3 matches the
    # core model's pramlintide rows bit for bit
    q1, q2, q3 = x[:3]
    out = [-(q["kp2p1"] + q["kp3p1"]) * q1,
           q["kp2p1"] * q1 - (q["ke2p2"] + q["kp3p2"] + q["kp4p2"]) * q2,
           q["kp3p1"] * q1 + q["kp3p2"] * q2 - (q["ke3p3"] + q["kp5p3"]) * q3]
    if model.n_states == 5:
        q4, q5 = x[3:]
        out[1] += q["kp2p4"] * q4
        out[2] += q["kp3p5"] * q5
        out += [q["kp4p2"] * q2 - q["kp2p4"] * q4, q["kp5p3"] * q3 - q["kp3p5"] * q5]
    return np.array(out)


def _pd_rhs(model, x, q, ins, pram, weight):
    """Glucoregulatory derivative; glucose masses in mmol/kg, gut in g/kg."""
    if model.variant >= 7:
        qs0, qs1, qs2, qg1, qg2 = x
    else:
        qs0 = 0.0
        qs1, qs2, qg1, qg2 = x
    e1 = 1.0 + q["sf_p1"] * pram
    e2 = 1.0 + q["sf_p2"] * pram
    k_s2s1 = q["k_s2s1"] / e1
    k_g1s2 = q["k_g1s2"] / e2
    k_se = q["k_se"] * (1.0 + q["sf_se"] * pram)
    x1 = q["s_t"] * ins
    x2 = q["s_d"] * ins
    g = qg1 / q["v_g"]
    f_r = q["k_r"] * max(0.0, g - RENAL_THRESHOLD) * q["v_g"]
    f01c = q["f01c"] * min(1.0, g / F01C_KNEE)
    d_qg1 = (ALPHA * k_g1s2 * qs2 - x1 * qg1 + q["k_g1g2"] * qg2
             + q["egp"] - f_r - f01c)
    d_qg2 = x1 * qg1 - q["k_g1g2"] * qg2 - x2 * qg2
    d_qs2 = k_s2s1 * qs1 - k_se * qs2 - k_g1s2 * qs2
    if model.variant >= 7:
        return np.array([-q["k_s1s0"] * qs0, q["k_s1s0"] * qs0 - k_s2s1 * qs1,
                         d_qs2, d_qg1, d_qg2])
    return np.array([-k_s2s1 * qs1, d_qs2, d_qg1, d_qg2])


def candidate_rhs(model: CandidateModel, state, theta, inputs: dict | None = None):
    """Time derivative of a candidate model.

    ``inputs`` supplies ``weight`` (kg, insulin PK), and for PD models the
    plasma ``insulin`` (mU/L) and ``pram`` (pg/mL) at the current time.
    """
    x = np.asarray(state, float)
    if x.shape != (model.n_states,):
        raise StructureError(f"{model.family.value} {model.variant} has "
                             f"{model.n_states} states, got {x.shape}")
    inputs = inputs or {}
    q = model.full(theta)
    if model.family is Family.INSULIN_PK:
        return _insulin_rhs(model, x, q, inputs.get("weight", 70.0))
    if model.family is Family.PRAM_PK:
        return _pram_rhs(model, x, q)
    return _pd_rhs(model, x, q, inputs.get("insulin", 0.0), inputs.get("pram", 0.0),
                   inputs.get("weight", 70.0))


# ---------------------------------------------------------------- simulation

def linear_response(a, x0, times) -> np.ndarray:
    """``expm(a t) @ x0`` for every t, shape (n, len(times)).

    Times are visited in sorted order and the transition over each distinct
    gap is computed once, so a uniform grid costs a single exponential.
    """
    t = np.atleast_1d(np.asarray(times, float))
    order = np.argsort(t, kind="stable")
    out = np.empty((len(x0), t.size))
    cache: dict = {}
    x = np.asarray(x0, float)
    prev = 0.0
    for j in order:
        gap = round(float(t[j] - prev), 12)
        if gap > 0:
            if gap not in cache:
                cache[gap] = expm(a * gap)
            x = cache[gap] @ x
        out[:, j] = x
        prev = t[j]
    return out


def _default_insulin_profile(exp: Experiment):
    p = ModelParams()
    # two-compartment subcutaneous absorption, plasma insulin in mU/L
    dose = exp.insulin * 1000.0 / exp.weight
    ka, ke, v = p.ka, p.ke, p.vd_i

    def prof(t):
        t = np.asarray(t, float)
        return dose * ka / v * (np.exp(-ke * t) - np.exp(-ka * t)) / (ka - ke)
    return prof


def _default_pram_profile(exp: Experiment):
    m = candidate(Family.PRAM_PK, 3)
    p = ModelParams()
    theta = np.array([p.kp2p1, p.ke2p2, p.ke3p3, p.kp3p2])
    a = pram_matrix(m, theta)
    x0 = np.array([exp.pram * 1e6 / exp.weight, 0.0, 0.0])
    # distinct eigenvalues at the default rates: closed-form sum of exponentials
    lam, vec = np.linalg.eig(a)
    w = ((vec[1] + vec[2]) * np.linalg.solve(vec, x0)).real / p.vp
    lam = lam.real

    def prof(t):
        return np.exp(np.multiply.outer(np.asarray(t, float), lam)) @ w
    return prof


def initial_state(model: CandidateModel, exp: Experiment, theta=None) -> np.ndarray:
    x0 = np.zeros(model.n_states)
    if model.family is Family.INSULIN_PK:
        dose = exp.insulin * 1000.0 / exp.weight  # mU/kg
        if model.variant >= 5:
            f_a = model.full(theta)["f_a"] if theta is not None else 0.5
            x0[0], x0[1] = f_a * dose, (1.0 - f_a) * dose
        else:
            x0[0] = dose
    elif model.family is Family.PRAM_PK:
        x0[0] = exp.pram * 1e6 / exp.weight  # pg/kg
    else:
        q = model.full(theta) if theta is not None else {**model.fixed}
        x0[0] = exp.carbs / exp.weight  # g/kg into the first gut compartment
        g_basal = 6.0  # mmol/L fasting glucose at t = 0
        x0[-2] = g_basal * q.get("v_g", PD_FIXED["v_g"])
        x0[-1] = x0[-2]
    return x0


def simulate_candidate(model: CandidateModel, theta, times, exp: Experiment | None = None
                       ) -> dict:
    """Observables of ``model`` at ``times`` (min) after the doses in ``exp``.

    Returns a mapping from observable name to an array: ``insulin`` (mU/L),
    ``intact`` and ``metabolite`` (pg/mL), ``glucose`` (mg/dL).
    """
    exp = exp or Experiment()
    t = np.asarray(times, float)
    if t.ndim != 1 or t.size == 0 or np.any(t < 0):
        raise ValueError("times must be a non-empty 1-d array of values >= 0")
    q = model.full(theta)
    x0 = initial_state(model, exp, theta)
    if model.family is Family.PRAM_PK:
        xs = linear_response(pram_matrix(model, theta), x0, t)
        return {"intact": xs[1] / q["vp"], "metabolite": xs[2] / q["vp"]}

    if model.family is Family.INSULIN_PK:
        if not q["ld"]:
            xs = linear_response(insulin_matrix(model, theta), x0, t)
            return {"insulin": xs[-1] / q["v_i"]}

        def f(x, _):
            return _insulin_rhs(model, x, q, exp.weight)
    else:
        ins = exp.insulin_profile or _default_insulin_profile(exp)
        prm = exp.pram_profile or _default_pram_profile(exp)

        def f(x, tt):
            return _pd_rhs(model, x, q, float(ins(tt)), float(prm(tt)), exp.weight)
    order = np.argsort(t)
    tt = np.concatenate([[0.0], t[order]])
    y, info = odeint(f, x0, tt, rtol=1e-9, atol=1e-10, full_output=True, mxstep=20000)
    if info["message"] != "Integration successful." or not np.all(np.isfinite(y)):
        raise FitError(f"integration failed: {info['message']}")
    xs = np.empty((model.n_states, t.size))
    xs[:, order] = y[1:].T
    if model.family is Family.INSULIN_PK:
        return {"insulin": xs[-1] / q["v_i"]}
    return {"glucose": xs[-2] / q["v_g"] * MGDL_PER_MMOL}


# ---------------------------------------------------------------- data

@dataclass
class Dataset:
    """Observations per observable: ``{name: (times, values)}``."""

    series: dict

    def __post_init__(self):
        if not self.series or all(len(v[0]) == 0 for v in self.series.values()):
            raise ValueError("dataset has no observations")

    @property
    def n_obs(self) -> int:
        return sum(len(v[0]) for v in self.series.values())

    @property
    def scale(self) -> float:
        vals = np.concatenate([np.asarray(v[1], float) for v in self.series.values()])
        return float(np.max(np.abs(vals))) or 1.0


def read_observations(path) -> Dataset:
    """Load a ``time_min, observable_name, value`` CSV file."""
    series: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"time_min", "observable_name", "value"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                t, v = float(row["time_min"]), float(row["value"])
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{lineno}: non-numeric time or value") from None
            name = row["observable_name"].strip()
            ts, vs = series.setdefault(name, ([], []))
            ts.append(t)
            vs.append(v)
    if not series:
        raise ValueError(f"{path}: no observations")
    return Dataset({k: (np.array(a), np.array(b)) for k, (a, b) in series.items()})


def write_observations(path, data: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_min", "observable_name", "value"])
        for name, (ts, vs) in data.series.items():
            for t, v in zip(ts, vs):
                w.writerow([repr(float(t)), name, repr(float(v))])


def synthesize(model: CandidateModel, theta, times, exp: Experiment | None = None,
               noise_sd: float = 0.0, seed: int = 0) -> Dataset:
    """Observations generated by ``model``, optionally with Gaussian noise."""
    obs = simulate_candidate(model, theta, times, exp)
    rng = np.random.default_rng(seed)
    t = np.asarray(times, float)
    return Dataset({k: (t.copy(), v + noise_sd * rng.standard_normal(v.shape))
                    for k, v in obs.items()})


# ---------------------------------------------------------------- fitting

@dataclass
class FitResult:
    params: np.ndarray
    rmse: float
    converged: bool
    n_starts: int
    names: tuple = ()
    residuals: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"params": dict(zip(self.names, map(float, self.params))),
                "rmse": float(self.rmse), "converged": bool(self.converged),
                "n_starts": int(self.n_starts)}


def _mse(model, theta, data: Dataset, exp):
    times = np.unique(np.concatenate([np.asarray(v[0], float) for v in data.series.values()]))
    try:
        sim = simulate_candidate(model, theta, times, exp)
    except (FitError, FloatingPointError, ValueError):
        return math.inf, {}
    total, resid = 0.0, {}
    for name, (ts, vs) in data.series.items():
        if name not in sim:
            raise ValueError(f"observable {name!r} not produced by {model.family.value}")
        pred = np.interp(ts, times, sim[name])
        r = np.asarray(vs, float) - pred
        resid[name] = r
        total += float(r @ r)
    mse = total / data.n_obs
    return (mse if np.isfinite(mse) else math.inf), resid


class _Stall:
    """Stop a local search once the best MSE improved by less than ``rtol``
    (relative) over the last ``window`` iterations."""

    def __init__(self, window: int = 50, rtol: float = 1e-9):
        self.window, self.rtol = window, rtol
        self.history: list[float] = []
        self.stalled = False

    def __call__(self, intermediate_result):
        f = float(intermediate_result.fun)
        self.history.append(f)
        if len(self.history) > self.window:
            old = self.history[-self.window - 1]
            if old - f <= self.rtol * abs(old):
                self.stalled = True
                raise StopIteration


def _local(obj, z0, lo, hi, max_iter):
    stall = _Stall()
    with np.errstate(invalid="ignore"):  # inf - inf while a simplex sits on failures
        res = minimize(obj, z0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                       callback=stall,
                       options={"xatol": 1e-10, "fatol": 0.0, "maxiter": max_iter,
                                "adaptive": len(z0) > 4})
    return res, bool(res.success or stall.stalled)


def fit_model(model: CandidateModel, data: Dataset, n_starts: int = 32,
              exp: Experiment | None = None, seed: int = 0,
              warm_starts: Sequence | None = None, max_iter: int | None = None
              ) -> FitResult:
    """Bounded multi-start least squares.

    Starts are drawn log-uniformly within the bounds; ``warm_starts`` (for
    example the best fit of a nested model, embedded) are tried first. Each
    local search is Nelder-Mead on log-parameters, confined to the bounds,
    restarted once from its optimum, and stopped when the relative MSE
    improvement over 50 iterations falls below 1e-9.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    lo, hi = np.log(model.lower), np.log(model.upper)
    max_iter = max_iter or 400 * len(lo)
    rng = np.random.default_rng(seed)
    starts = [np.clip(np.log(np.asarray(w, float)), lo, hi) for w in (warm_starts or [])]
    starts += [rng.uniform(lo, hi) for _ in range(n_starts)]
    scale2 = data.scale ** 2

    def obj(z):
        return _mse(model, np.exp(np.clip(z, lo, hi)), data, exp)[0] / scale2

    best, best_ok = None, False
    for z0 in starts:
        try:
            res, ok = _local(obj, z0, lo, hi, max_iter)
            if not np.isfinite(res.fun):
                continue
            res2, ok2 = _local(obj, res.x, lo, hi, max_iter)
        except (ValueError, FloatingPointError):
            continue
        if res2.fun <= res.fun:
            res, ok = res2, ok2
        if best is None or res.fun < best.fun:
            best, best_ok = res, ok
    if best is None:
        return FitResult(params=np.exp(starts[0]), rmse=math.inf, converged=False,
                         n_starts=len(starts), names=model.names)
    theta = np.clip(np.exp(best.x), model.lower, model.upper)
    mse, resid = _mse(model, theta, data, exp)
    return FitResult(params=theta, rmse=math.sqrt(mse), converged=best_ok,
                     n_starts=len(starts), names=model.names, residuals=resid)


def embed(nested: CandidateModel, theta, general: CandidateModel) -> np.ndarray:
    """Parameters of ``general`` reproducing ``nested`` at ``theta``."""
    q = nested.full(theta)
    out = []
    for name in general.names:
        v = q.get(name)
        if v is None or v <= 0:
            lo, hi = general.bounds[name]
            v = lo
        out.append(v)
    return np.clip(np.array(out, float), general.lower, general.upper)


# ---------------------------------------------------------------- diagnostics

def rhat(chains) -> float:
    """Mixing diagnostic over M chains of N draws each.

    ``sqrt(1 - 1/N + sum_m (mean_m - mean)^2 / sum_m s_m^2)`` with ``s_m^2``
    the per-chain sample variance (ddof=1). Raises ``ZeroDivisionError`` when
    every chain is constant.
    """
    c = np.asarray(chains, float)
    if c.ndim != 2 or c.shape[0] < 2 or c.shape[1] < 2:
        raise ValueError("need at least 2 chains of at least 2 draws")
    n = c.shape[1]
    means = c.mean(axis=1)
    within = float(np.sum(c.var(axis=1, ddof=1)))
    if within == 0.0:
        raise ZeroDivisionError("within-chain variance is zero")
    between = float(np.sum((means - means.mean()) ** 2))
    return math.sqrt(1.0 - 1.0 / n + between / within)


def rhat_ok(value: float, threshold: float = 1.1) -> bool:
    return value <= threshold


def compare_models(rmse_a, rmse_b, n_comparisons: int = 1, alpha: float = 0.05) -> dict:
    """Paired t-test on per-subject RMSE with a Bonferroni-corrected level.

    A zero-variance difference with nonzero mean has no finite t statistic;
    it is returned with ``degenerate=True`` and ``significant=False``.
    """
    a = np.asarray(rmse_a, float)
    b = np.asarray(rmse_b, float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length vectors with at least 2 entries")
    if n_comparisons < 1:
        raise ValueError("n_comparisons must be >= 1")
    d = a - b
    level = alpha / n_comparisons
    if np.all(d == d[0]):
        if d[0] == 0:
            return {"t": 0.0, "p": 1.0, "significant": False, "degenerate": False,
                    "level": level}
        return {"t": math.copysign(math.inf, d[0]), "p": 0.0, "significant": False,
                "degenerate": True, "level": level}
    res = ttest_rel(a, b)
    t, p = float(res.statistic), float(res.pvalue)
    return {"t": t, "p": p, "significant": p < level, "degenerate": False, "level": level}
