"""Nonlinear glucoregulatory model with subcutaneous insulin and pramlintide.

The state vector has ten compartments, always in this order::

    0 q1   plasma glucose                      mg/kg
    1 q2   glucose, inaccessible compartment   mg/kg
    2 x_i  subcutaneous insulin                mU/kg
    3 i    plasma insulin concentration        mU/L
    4 x    insulin action                      1/min
    5 m1   gut carbohydrate                    g
    6 m2   second meal compartment             g
    7 qp1  subcutaneous pramlintide            pg/kg
    8 qp2  intact pramlintide in plasma        pg/kg
    9 qp3  active metabolite in plasma         pg/kg

Pramlintide slows gastric emptying: both gut transfer rates ``1/tmax_g`` are
scaled by ``1 / (1 + sf * (qp2 + qp3) / vp)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

STATE_NAMES = ("q1", "q2", "x_i", "i", "x", "m1", "m2", "qp1", "qp2", "qp3")
N_STATES = len(STATE_NAMES)
Q1, Q2, XI, I, X, M1, M2, QP1, QP2, QP3 = range(N_STATES)

# indices clamped at zero after each integration step
NONNEG = (Q1, Q2, XI, M1, M2, QP1, QP2, QP3)

MMOL_PER_G_GLUCOSE = 5.556
MG_PER_MMOL_GLUCOSE = 180.0
MU_PER_U = 1000.0
PG_PER_MCG = 1e6


class ModelDomainError(ValueError):
    """Raised when the model is evaluated at a non-finite point."""


class IntegrationError(RuntimeError):
    """Raised when an integration step produces a non-finite state."""


class InfeasibleTargetError(ValueError):
    """Raised when a glucose target cannot be held by any non-negative insulin rate."""


@dataclass(frozen=True)
class ModelParams:
    """Patient parameters. Defaults are the population values of the model.

    ``p3`` (insulin action gain, L/(mU min^2)) has no population value; the
    default is calibrated so that 1 U/hr holds 120 mg/dL at 70 kg.
    """

    p1: float = 0.0122
    q1b: float = 260.0
    p2: float = 0.035
    p3: float = 2.0224e-5
    k21: float = 0.058
    k12: float = 0.0885
    ka: float = 0.026
    ke: float = 0.013
    tmax_g: float = 40.0
    a_g: float = 0.8
    vd_i: float = 1.274
    vd_g: float = 1.289
    kp2p1: float = 0.036103
    kp3p2: float = 0.02693735
    ke2p2: float = 0.504307
    ke3p3: float = 0.02199495
    vp: float = 104.478
    sfp1: float = 0.02831485
    sfp2: float = 0.0189834
    ts: float = 5.0
    weight: float = 70.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"parameter {f.name} must be finite, got {v}")
        rates = ("p1", "p2", "p3", "k21", "k12", "ka", "ke", "kp2p1",
                 "kp3p2", "ke2p2", "ke3p3")
        for name in rates + ("q1b", "tmax_g", "vd_i", "vd_g", "vp", "ts", "weight"):
            if getattr(self, name) <= 0:
                raise ValueError(f"parameter {name} must be > 0")
        if not 0 < self.a_g <= 1:
            raise ValueError("a_g must lie in (0, 1]")
        if self.sfp1 < 0 or self.sfp2 < 0:
            raise ValueError("pramlintide sensitivity factors must be >= 0")

    @property
    def k_carb(self) -> float:
        return carb_gain(self.a_g, self.tmax_g, self.weight)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class ModelState:
    q1: float = 0.0
    q2: float = 0.0
    x_i: float = 0.0
    i: float = 0.0
    x: float = 0.0
    m1: float = 0.0
    m2: float = 0.0
    qp1: float = 0.0
    qp2: float = 0.0
    qp3: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in STATE_NAMES], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "ModelState":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (N_STATES,):
            raise ValueError(f"expected a state of shape ({N_STATES},), got {arr.shape}")
        return cls(*(float(v) for v in arr))

    def glucose(self, params: ModelParams) -> float:
        """Plasma glucose concentration in mg/dL."""
        return self.q1 / params.vd_g


@dataclass(frozen=True)
class ModelInputs:
    """Infusion rates: insulin mU/kg/min, pramlintide pg/kg/min, carbs g/min."""

    u_i: float = 0.0
    u_p: float = 0.0
    u_m: float = 0.0

    def __post_init__(self):
        for name in ("u_i", "u_p", "u_m"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"input {name} must be finite and >= 0, got {v}")


def _as_array(state) -> np.ndarray:
    if isinstance(state, ModelState):
        return state.to_array()
    return np.asarray(state, dtype=float)


def pram_effect(qp2: float, qp3: float, sf: float, vp: float) -> float:
    """Gastric-emptying attenuation factor in (0, 1]."""
    if not all(math.isfinite(v) for v in (qp2, qp3, sf, vp)):
        raise ModelDomainError("pram_effect needs finite inputs")
    if vp <= 0:
        raise ValueError("vp must be > 0")
    return 1.0 / (1.0 + sf * (qp2 + qp3) / vp)


def carb_gain(a_g: float, tmax_g: float, weight: float) -> float:
    """Meal appearance gain K in mg/(g kg min).

    The carbohydrate-to-glucose conversion is a product
    ``5.556 mmol/g * a_g * 180 mg/mmol``, spread over ``tmax_g`` and body weight.
    """
    if tmax_g <= 0 or weight <= 0:
        raise ValueError("tmax_g and weight must be > 0")
    return MMOL_PER_G_GLUCOSE * a_g * MG_PER_MMOL_GLUCOSE / (tmax_g * weight)


def _rhs(x, u_i, u_p, u_m, p: ModelParams, k: float):
    # scalar arithmetic: an order of magnitude faster than numpy at n=10
    q1, q2, xi, ii, xx, m1, m2, qp1, qp2, qp3 = x
    qp = qp2 + qp3
    e1 = 1.0 + p.sfp1 * qp / p.vp
    e2 = 1.0 + p.sfp2 * qp / p.vp
    gut1 = m1 / (p.tmax_g * e1)
    gut2 = m2 / (p.tmax_g * e2)
    return [
        -(xx + p.p1 + p.k21) * q1 + p.k12 * q2 + p.p1 * p.q1b + k * m2 / e2,
        p.k21 * q1 - p.k12 * q2,
        u_i - p.ka * xi,
        p.ka * xi / p.vd_i - p.ke * ii,
        p.p3 * ii - p.p2 * xx,
        u_m - gut1,
        gut1 - gut2,
        u_p - p.kp2p1 * qp1,
        p.kp2p1 * qp1 - (p.ke2p2 + p.kp3p2) * qp2,
        p.kp3p2 * qp2 - p.ke3p3 * qp3,
    ]


def model_rhs(state, inputs: ModelInputs, params: ModelParams) -> np.ndarray:
    """Time derivative of the ten model states.

    ``state`` may be a :class:`ModelState` or a length-10 array.
    """
    x = _as_array(state)
    if x.shape != (N_STATES,):
        raise ValueError(f"expected a state of shape ({N_STATES},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ModelDomainError("model_rhs evaluated at a non-finite state")
    return np.array(_rhs(x.tolist(), inputs.u_i, inputs.u_p, inputs.u_m,
                         params, params.k_carb))


def integrate_step(state, inputs: ModelInputs, params: ModelParams, dt: float):
    """Advance one classical RK4 step with inputs held constant.

    Components that must be non-negative are clamped at zero afterwards.
    Returns the same kind of object that was passed in.
    """
    if not (dt > 0 and dt <= params.ts):
        raise ValueError(f"dt must satisfy 0 < dt <= ts={params.ts}, got {dt}")
    as_state = isinstance(state, ModelState)
    x = _as_array(state).tolist()
    out = _rk4(x, inputs.u_i, inputs.u_p, inputs.u_m, params, params.k_carb, dt)
    if not all(math.isfinite(v) for v in out):
        raise IntegrationError("integration produced a non-finite state")
    return ModelState(*out) if as_state else np.array(out)


def _rk4(x, u_i, u_p, u_m, p, k, dt):
    k1 = _rhs(x, u_i, u_p, u_m, p, k)
    k2 = _rhs([a + 0.5 * dt * b for a, b in zip(x, k1)], u_i, u_p, u_m, p, k)
    k3 = _rhs([a + 0.5 * dt * b for a, b in zip(x, k2)], u_i, u_p, u_m, p, k)
    k4 = _rhs([a + dt * b for a, b in zip(x, k3)], u_i, u_p, u_m, p, k)
    out = [a + dt / 6.0 * (b + 2.0 * c + 2.0 * d + e)
           for a, b, c, d, e in zip(x, k1, k2, k3, k4)]
    for j in NONNEG:
        if out[j] < 0.0:
            out[j] = 0.0
    return out


def simulate(state, inputs: ModelInputs, params: ModelParams, duration: float,
             dt: float = 1.0) -> np.ndarray:
    """Integrate with constant inputs; returns an array of shape (n+1, 10)."""
    n = int(round(duration / dt))
    if not math.isclose(n * dt, duration, rel_tol=0, abs_tol=1e-9):
        raise ValueError("duration must be a multiple of dt")
    x = _as_array(state).tolist()
    k = params.k_carb
    out = [x]
    for _ in range(n):
        x = _rk4(x, inputs.u_i, inputs.u_p, inputs.u_m, params, k, dt)
        out.append(x)
    traj = np.array(out)
    if not np.all(np.isfinite(traj)):
        raise IntegrationError("integration produced a non-finite state")
    return traj


def zero_input_equilibrium(params: ModelParams) -> ModelState:
    """Fixed point with no insulin, pramlintide or food."""
    return ModelState(q1=params.q1b, q2=params.k21 / params.k12 * params.q1b)


def steady_state(params: ModelParams, u_i: float = 0.0, u_p: float = 0.0) -> ModelState:
    """Closed-form steady state under constant infusions and no food."""
    xi = u_i / params.ka
    ii = u_i / (params.vd_i * params.ke)
    xx = params.p3 * ii / params.p2
    q1 = params.p1 * params.q1b / (params.p1 + xx)
    qp1 = u_p / params.kp2p1
    qp2 = u_p / (params.ke2p2 + params.kp3p2)
    qp3 = params.kp3p2 * qp2 / params.ke3p3
    return ModelState(q1=q1, q2=params.k21 / params.k12 * q1, x_i=xi, i=ii, x=xx,
                      qp1=qp1, qp2=qp2, qp3=qp3)


def basal_for_target(params: ModelParams, target_conc: float) -> float:
    """Constant insulin infusion (mU/kg/min) that holds ``target_conc`` mg/dL."""
    ceiling = params.q1b / params.vd_g
    if target_conc > ceiling:
        raise InfeasibleTargetError(
            f"target {target_conc} mg/dL is above the zero-insulin fixed point "
            f"{ceiling:.2f} mg/dL")
    if target_conc <= 0:
        raise ValueError("target must be > 0")
    x_ss = params.p1 * (params.q1b / (target_conc * params.vd_g) - 1.0)
    i_ss = x_ss * params.p2 / params.p3
    return i_ss * params.vd_i * params.ke


def insulin_to_model(rate_u_per_hr: float, weight: float) -> float:
    """U/hr -> mU/kg/min."""
    return rate_u_per_hr * MU_PER_U / 60.0 / weight


def insulin_from_model(u: float, weight: float) -> float:
    """mU/kg/min -> U/hr."""
    return u * 60.0 * weight / MU_PER_U


def pram_to_model(rate_mcg_per_hr: float, weight: float) -> float:
    """mcg/hr -> pg/kg/min."""
    return rate_mcg_per_hr * PG_PER_MCG / 60.0 / weight


def glucose(state, params: ModelParams) -> float:
    return float(_as_array(state)[Q1]) / params.vd_g
