"""Local linear models of the nonlinear dynamics and their ZOH discretization.

Two linearizations are offered:

* ``foh``: first-order Taylor expansion, ``dx/dt ~= A x + B u + G u_m + d``
  with ``A`` the Jacobian at the expansion point.
* ``zoh``: the bilinear factors (insulin action on glucose disposal and the
  pramlintide gastric-emptying factors) are frozen at their current values.

Both reproduce the nonlinear derivative exactly at the expansion point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .model import (I, M1, M2, N_STATES, Q1, Q2, QP1, QP2, QP3, X, XI,
                    ModelInputs, ModelParams, _as_array, model_rhs)

INPUT_NAMES = ("insulin", "pramlintide")


class DiscretizationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LinearModel:
    """Continuous-time ``dx/dt = a x + b u + g u_m + d``.

    ``b`` has an insulin column (mU/kg/min) and a pramlintide column
    (pg/kg/min); ``g`` is the carbohydrate column (g/min).
    """

    a: np.ndarray
    b: np.ndarray
    g: np.ndarray
    d: np.ndarray
    xstar: np.ndarray
    mode: str

    def derivative(self, x, u=(0.0, 0.0), u_m=0.0) -> np.ndarray:
        return self.a @ np.asarray(x, float) + self.b @ np.asarray(u, float) \
            + self.g * u_m + self.d


@dataclass(frozen=True)
class DiscreteModel:
    """``x[k+1] = ad x[k] + bd u[k] + gd u_m[k] + dd`` and ``y = c x`` in mg/dL."""

    ad: np.ndarray
    bd: np.ndarray
    gd: np.ndarray
    dd: np.ndarray
    c: np.ndarray
    ts: float

    def step(self, x, u=(0.0, 0.0), u_m=0.0) -> np.ndarray:
        return self.ad @ x + self.bd @ np.asarray(u, float) + self.gd * u_m + self.dd


def input_matrices():
    b = np.zeros((N_STATES, 2))
    b[XI, 0] = 1.0
    b[QP1, 1] = 1.0
    g = np.zeros(N_STATES)
    g[M1] = 1.0
    return b, g


def _linear_rows(a, p: ModelParams):
    a[Q2, Q1] = p.k21
    a[Q2, Q2] = -p.k12
    a[XI, XI] = -p.ka
    a[I, XI] = p.ka / p.vd_i
    a[I, I] = -p.ke
    a[X, I] = p.p3
    a[X, X] = -p.p2
    a[QP1, QP1] = -p.kp2p1
    a[QP2, QP1] = p.kp2p1
    a[QP2, QP2] = -(p.ke2p2 + p.kp3p2)
    a[QP3, QP2] = p.kp3p2
    a[QP3, QP3] = -p.ke3p3


def jacobian(state, params: ModelParams) -> np.ndarray:
    """Analytic Jacobian of the model right-hand side (10 x 10, 1/min units)."""
    x = _as_array(state)
    p = params
    k = p.k_carb
    qp = x[QP2] + x[QP3]
    e1 = qp * p.sfp1 / p.vp + 1.0
    e2 = qp * p.sfp2 / p.vp + 1.0
    a = np.zeros((N_STATES, N_STATES))
    _linear_rows(a, p)

    a[Q1, Q1] = -p.p1 - p.k21 - x[X]
    a[Q1, Q2] = p.k12
    a[Q1, X] = -x[Q1]
    a[Q1, M2] = k / e2
    a[Q1, QP2] = a[Q1, QP3] = -k * p.sfp2 * x[M2] / (e2 ** 2 * p.vp)

    a[M1, M1] = -1.0 / (e1 * p.tmax_g)
    a[M1, QP2] = a[M1, QP3] = p.sfp1 * x[M1] / (e1 ** 2 * p.vp * p.tmax_g)

    a[M2, M1] = 1.0 / (e1 * p.tmax_g)
    a[M2, M2] = -1.0 / (e2 * p.tmax_g)
    a[M2, QP2] = a[M2, QP3] = (p.sfp2 * x[M2] / (e2 ** 2 * p.vp * p.tmax_g)
                               - p.sfp1 * x[M1] / (e1 ** 2 * p.vp * p.tmax_g))
    return a


def _frozen_matrix(state, params: ModelParams) -> np.ndarray:
    x = _as_array(state)
    p = params
    qp = x[QP2] + x[QP3]
    e1 = qp * p.sfp1 / p.vp + 1.0
    e2 = qp * p.sfp2 / p.vp + 1.0
    a = np.zeros((N_STATES, N_STATES))
    _linear_rows(a, p)
    a[Q1, Q1] = -p.p1 - p.k21 - x[X]
    a[Q1, Q2] = p.k12
    a[Q1, M2] = p.k_carb / e2
    a[M1, M1] = -1.0 / (e1 * p.tmax_g)
    a[M2, M1] = 1.0 / (e1 * p.tmax_g)
    a[M2, M2] = -1.0 / (e2 * p.tmax_g)
    return a


def _finish(a, state, inputs: ModelInputs | None, params, mode) -> LinearModel:
    x = _as_array(state).astype(float)
    inputs = inputs or ModelInputs()
    b, g = input_matrices()
    u = np.array([inputs.u_i, inputs.u_p])
    f = model_rhs(x, inputs, params)
    d = f - a @ x - b @ u - g * inputs.u_m
    return LinearModel(a=a, b=b, g=g, d=d, xstar=x, mode=mode)


def linearize_foh(state, inputs: ModelInputs | None, params: ModelParams) -> LinearModel:
    return _finish(jacobian(state, params), state, inputs, params, "foh")


def linearize_zoh(state, inputs: ModelInputs | None, params: ModelParams) -> LinearModel:
    return _finish(_frozen_matrix(state, params), state, inputs, params, "zoh")


def linearize(state, inputs, params, mode: str = "foh") -> LinearModel:
    if mode == "foh":
        return linearize_foh(state, inputs, params)
    if mode == "zoh":
        return linearize_zoh(state, inputs, params)
    raise ValueError(f"unknown linearization mode {mode!r}")


def output_matrix(params: ModelParams) -> np.ndarray:
    c = np.zeros(N_STATES)
    c[Q1] = 1.0 / params.vd_g
    return c


def discretize(lm: LinearModel, ts: float, params: ModelParams | None = None) -> DiscreteModel:
    """Exact zero-order-hold discretization via one augmented exponential.

    The exogenous columns ``[b g d]`` are appended to ``a`` so that a single
    matrix exponential yields all discrete matrices at once.
    """
    if not ts > 0:
        raise ValueError("ts must be > 0")
    n = lm.a.shape[0]
    inputs = np.column_stack([lm.b, lm.g, lm.d])
    m = inputs.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = lm.a
    aug[:n, n:] = inputs
    with np.errstate(over="ignore", invalid="ignore"):
        phi = expm(aug * ts)
    if not np.all(np.isfinite(phi)):
        raise DiscretizationError("matrix exponential is not finite")
    top = phi[:n]
    c = output_matrix(params or ModelParams()) if n == N_STATES else np.zeros(n)
    return DiscreteModel(ad=top[:, :n], bd=top[:, n:n + 2], gd=top[:, n + 2],
                         dd=top[:, n + 3], c=c, ts=ts)


# ---------------------------------------------------------------- self-checks

# sampling box for "feasible" states: physiological glucose, generous insulin,
# meal and pramlintide loads
FEASIBLE_BOX = {
    Q1: (40.0, 400.0),  # mg/dL, scaled by vd_g below
    Q2: (0.0, 600.0),
    XI: (0.0, 200.0),
    I: (0.0, 150.0),
    X: (0.0, 0.05),
    M1: (0.0, 120.0),
    M2: (0.0, 120.0),
    QP1: (0.0, 20000.0),
    QP2: (0.0, 5000.0),
    QP3: (0.0, 5000.0),
}


def random_feasible_states(n: int, seed: int = 0,
                           params: ModelParams | None = None) -> np.ndarray:
    """``n`` states drawn uniformly from :data:`FEASIBLE_BOX` (shape (n, 10))."""
    p = params or ModelParams()
    rng = np.random.default_rng(seed)
    lo = np.array([FEASIBLE_BOX[j][0] for j in range(N_STATES)])
    hi = np.array([FEASIBLE_BOX[j][1] for j in range(N_STATES)])
    lo[Q1] *= p.vd_g
    hi[Q1] *= p.vd_g
    return rng.uniform(lo, hi, size=(n, N_STATES))


def finite_difference_jacobian(state, params: ModelParams, h: float = 1e-6,
                               inputs: ModelInputs | None = None) -> np.ndarray:
    """Central differences with step ``h * max(1, |x_j|)``."""
    x = _as_array(state).astype(float)
    inputs = inputs or ModelInputs()
    out = np.empty((N_STATES, N_STATES))
    for j in range(N_STATES):
        step = h * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        out[:, j] = (model_rhs(xp, inputs, params) - model_rhs(xm, inputs, params)) / (2 * step)
    return out


def jacobian_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-9) -> float:
    """Largest relative entry error; entries within ``atol`` count as exact."""
    diff = np.abs(analytic - numeric)
    rel = np.where(diff <= atol, 0.0, diff / np.maximum(np.abs(numeric), atol))
    return float(rel.max())


@dataclass
class LinearizationReport:
    n_states: int
    jacobian_max_rel: float
    foh_max_abs: float
    zoh_max_abs: float
    worst_jacobian_state: np.ndarray
    worst_exact_state: np.ndarray
    rtol: float
    exact_tol: float

    @property
    def ok(self) -> bool:
        return (self.jacobian_max_rel < self.rtol
                and max(self.foh_max_abs, self.zoh_max_abs) <= self.exact_tol)


def check_linearization(n_states: int = 100, seed: int = 0,
                        params: ModelParams | None = None, rtol: float = 1e-5,
                        atol: float = 1e-9, exact_tol: float = 1e-12) -> LinearizationReport:
    """Jacobian against finite differences plus FOH/ZOH point exactness.

    Random inputs accompany each state so the input columns are exercised.
    """
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    p = params or ModelParams()
    states = random_feasible_states(n_states, seed, p)
    rng = np.random.default_rng(seed + 1)
    worst_j = worst_x = (-1.0, states[0])
    foh_err = zoh_err = 0.0
    for x in states:
        u = ModelInputs(u_i=float(rng.uniform(0, 50)), u_p=float(rng.uniform(0, 500)),
                        u_m=float(rng.uniform(0, 5)))
        err = jacobian_error(jacobian(x, p), finite_difference_jacobian(x, p), atol)
        if err > worst_j[0]:
            worst_j = (err, x)
        f = model_rhs(x, u, p)
        uu = np.array([u.u_i, u.u_p])
        for mode in ("foh", "zoh"):
            lm = linearize(x, u, p, mode)
            e = float(np.max(np.abs(lm.a @ x + lm.b @ uu + lm.g * u.u_m + lm.d - f)))
            if mode == "foh":
                foh_err = max(foh_err, e)
            else:
                zoh_err = max(zoh_err, e)
            if e > worst_x[0]:
                worst_x = (e, x)
    return LinearizationReport(n_states=n_states, jacobian_max_rel=worst_j[0],
                               foh_max_abs=foh_err, zoh_max_abs=zoh_err,
                               worst_jacobian_state=worst_j[1],
                               worst_exact_state=worst_x[1], rtol=rtol,
                               exact_tol=exact_tol)
