"""Linear MPC for insulin with the pramlintide delivery policies.

Each control step the nonlinear model is linearized at the current state,
discretized at the sampling time and used to predict glucose over the
prediction horizon. A box-constrained least-squares problem then trades
tracking of a reference trajectory against deviation from basal delivery.
Pramlintide is either withheld, tied to insulin at a fixed ratio, optimized
alongside insulin, or infused at a constant multiple of the recent insulin
rate.
"""
from __future__ import annotations

import enum
import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import lsq_linear

from .linearize import discretize, linearize
from .model import (N_STATES, QP1, QP2, QP3, ModelParams, _as_array,
                    basal_for_target, insulin_from_model, insulin_to_model,
                    pram_to_model)

log = logging.getLogger(__name__)

FIXED_RATIO = 6.0  # mcg pramlintide per U insulin
STANDARD_MULTIPLIERS = (0, 2, 4, 6, 8, 10)


class Policy(str, enum.Enum):
    INSULIN_ONLY = "insulin_only"
    FIXED_RATIO_UNAWARE = "fixed_ratio_unaware"
    FIXED_RATIO_AWARE = "fixed_ratio_aware"
    INDEPENDENT = "independent"
    BASAL_PRAM = "basal_pram"

    @property
    def fixed_ratio(self) -> bool:
        return self in (Policy.FIXED_RATIO_AWARE, Policy.FIXED_RATIO_UNAWARE)


@dataclass(frozen=True)
class MpcConfig:
    """Controller settings.

    Rates are in pump units: insulin U/hr, pramlintide mcg/hr. ``pram_aware``
    left as ``None`` follows the policy (only the unaware fixed-ratio arm hides
    pramlintide from the process model).
    """

    np: int = 60
    nc: int = 12
    target: float = 110.0
    q_weight: float = 1.0
    r_weight_ins: float = 100.0
    r_weight_pram: float = 2.0
    u_max_ins: float = 12.0
    u_max_pram: float = 72.0
    ref_tau: float = 60.0
    ts: float = 5.0
    policy: Policy = Policy.INSULIN_ONLY
    basal_multiplier: float = 0.0
    pram_aware: bool | None = None
    linearization: str = "foh"
    pram_ratio: float = FIXED_RATIO
    insulin_quantum: float = 0.05
    pram_quantum: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy(self.policy))
        if self.np < 1 or self.nc < 1:
            raise ValueError("np and nc must be >= 1")
        if min(self.q_weight, self.r_weight_ins, self.r_weight_pram) < 0:
            raise ValueError("weights must be >= 0")
        if self.u_max_ins <= 0 or self.u_max_pram <= 0:
            raise ValueError("rate caps must be > 0")
        if self.ts <= 0 or self.ref_tau <= 0:
            raise ValueError("ts and ref_tau must be > 0")
        if self.linearization not in ("foh", "zoh"):
            raise ValueError("linearization must be 'foh' or 'zoh'")

    @property
    def aware(self) -> bool:
        if self.pram_aware is not None:
            return self.pram_aware
        return self.policy is not Policy.FIXED_RATIO_UNAWARE

    def with_(self, **changes) -> "MpcConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class DoseCommand:
    """Delivery for one control step.

    ``insulin_rate`` / ``pram_rate`` are the continuous parts (U/hr, mcg/hr);
    boluses are amounts delivered within the same step.
    """

    insulin_rate: float = 0.0
    pram_rate: float = 0.0
    insulin_bolus: float = 0.0
    pram_bolus: float = 0.0
    fallback: bool = False

    def insulin_amount(self, ts: float = 5.0) -> float:
        return self.insulin_rate * ts / 60.0 + self.insulin_bolus

    def pram_amount(self, ts: float = 5.0) -> float:
        return self.pram_rate * ts / 60.0 + self.pram_bolus


def reference_trajectory(current: float, cfg: MpcConfig) -> np.ndarray:
    """Glucose reference over the horizon, samples k = 1..np.

    Above target: straight line reaching the target at the end of the horizon.
    Below target: exponential approach with time constant ``ref_tau``.
    """
    if not current > 0:
        raise ValueError("current glucose must be > 0")
    k = np.arange(1, cfg.np + 1, dtype=float)
    if current >= cfg.target:
        return current + (cfg.target - current) * k / cfg.np
    return cfg.target + (current - cfg.target) * np.exp(-k * cfg.ts / cfg.ref_tau)


def basal_pram_rate(avg_iir: float, multiplier: float) -> float:
    """Constant pramlintide rate (mcg/hr) as a multiple of the insulin rate."""
    if avg_iir < 0:
        raise ValueError("average insulin rate must be >= 0")
    if multiplier not in STANDARD_MULTIPLIERS:
        warnings.warn(f"basal pramlintide multiplier {multiplier} is outside "
                      f"the evaluated set {STANDARD_MULTIPLIERS}", stacklevel=2)
    return multiplier * avg_iir


class _Quantizer:
    """Pump-style quantization; the undelivered remainder carries forward."""

    def __init__(self, quantum: float):
        self.quantum = quantum
        self.carry = 0.0

    def __call__(self, amount: float) -> float:
        want = amount + self.carry
        n = math.floor(want / self.quantum + 1e-9)
        out = max(n, 0) * self.quantum
        self.carry = min(max(want - out, 0.0), self.quantum)
        return out


@dataclass
class _Plan:
    cols: np.ndarray  # (10, ncols) model-unit effect of one pump unit
    base: np.ndarray  # (ncols,) reference decision value
    upper: np.ndarray
    weights: np.ndarray
    fixed_input: np.ndarray = field(default_factory=lambda: np.zeros(2))


class MpcController:
    """Stateful controller advanced once per sampling period.

    Parameters
    ----------
    params : ModelParams
        Process-model parameters (the in-silico patient).
    cfg : MpcConfig
    declared_basal : float, optional
        Basal insulin in U/hr used to seed the 24 h insulin-rate average.
        Defaults to the rate that holds ``cfg.target``.
    """

    def __init__(self, params: ModelParams, cfg: MpcConfig | None = None,
                 declared_basal: float | None = None):
        self.params = params
        self.cfg = cfg or MpcConfig()
        self.u_basal = insulin_from_model(basal_for_target(params, self.cfg.target),
                                          params.weight)
        seed = self.u_basal if declared_basal is None else declared_basal
        self._history = deque([seed] * int(round(1440 / self.cfg.ts)),
                              maxlen=int(round(1440 / self.cfg.ts)))
        self._q_ins = _Quantizer(self.cfg.insulin_quantum)
        self._q_pram = _Quantizer(self.cfg.pram_quantum)
        self._ins_scale = insulin_to_model(1.0, params.weight)
        self._pram_scale = pram_to_model(1.0, params.weight)

    def _estimate(self, state) -> np.ndarray:
        x0 = _as_array(state).astype(float).copy()
        if x0.shape != (N_STATES,) or not np.all(np.isfinite(x0)):
            raise ValueError("invalid state estimate")
        if not self.cfg.aware:
            x0[[QP1, QP2, QP3]] = 0.0
        return x0

    @property
    def avg_insulin_rate(self) -> float:
        """Trailing 24 h mean of delivered insulin, U/hr."""
        return float(np.mean(self._history))

    def _insulin_cap(self) -> float:
        cfg = self.cfg
        if cfg.policy.fixed_ratio:
            return min(cfg.u_max_ins, cfg.u_max_pram / cfg.pram_ratio)
        return cfg.u_max_ins

    def _plan(self, bd: np.ndarray) -> _Plan:
        cfg = self.cfg
        ins = bd[:, 0] * self._ins_scale
        pram = bd[:, 1] * self._pram_scale
        pol = cfg.policy
        if pol is Policy.INDEPENDENT:
            return _Plan(cols=np.column_stack([ins, pram]),
                         base=np.array([self.u_basal, 0.0]),
                         upper=np.array([cfg.u_max_ins, cfg.u_max_pram]),
                         weights=np.array([cfg.r_weight_ins, cfg.r_weight_pram]))
        if pol.fixed_ratio:
            col = ins + cfg.pram_ratio * pram
        else:
            col = ins
        fixed = np.zeros(2)
        if pol is Policy.BASAL_PRAM:
            fixed[1] = self.basal_pram()
        return _Plan(cols=col[:, None], base=np.array([self.u_basal]),
                     upper=np.array([self._insulin_cap()]),
                     weights=np.array([cfg.r_weight_ins]), fixed_input=fixed)

    def basal_pram(self) -> float:
        return min(basal_pram_rate(self.avg_insulin_rate, self.cfg.basal_multiplier),
                   self.cfg.u_max_pram)

    def optimize(self, state, bolus=(0.0, 0.0)) -> np.ndarray:
        """Solve the horizon problem; returns the first move in pump units.

        ``bolus`` holds insulin (U) and pramlintide (mcg) already committed for
        the current period. The returned vector has one entry per decision
        input of the policy (insulin, plus pramlintide for independent control).
        """
        cfg = self.cfg
        p = self.params
        x0 = self._estimate(state)
        lm = linearize(x0, None, p, cfg.linearization)
        if not cfg.aware:
            lm = replace(lm, b=lm.b * np.array([1.0, 0.0]))
        dm = discretize(lm, cfg.ts, p)
        plan = self._plan(dm.bd)

        # free response with every decision input held at its reference value
        drift = dm.dd + plan.cols @ plan.base
        drift = drift + dm.bd @ (plan.fixed_input * np.array([self._ins_scale,
                                                               self._pram_scale]))
        committed = np.asarray(bolus, float) * 60.0 / cfg.ts \
            * np.array([self._ins_scale, self._pram_scale])
        y_free = np.empty(cfg.np)
        rows = np.empty((cfg.np, N_STATES))
        x = x0 + 0.0
        r = dm.c
        for k in range(cfg.np):
            x = dm.ad @ x + drift
            if k == 0:
                x = x + dm.bd @ committed
            y_free[k] = dm.c @ x
            rows[k] = r
            r = r @ dm.ad
        h = rows @ plan.cols  # markov parameters, (np, ncols)

        nu = plan.cols.shape[1]
        nc = min(cfg.nc, cfg.np)
        s = np.zeros((cfg.np, nc * nu))
        for j in range(nc):
            s[j:, j * nu:(j + 1) * nu] = h[:cfg.np - j]

        ref = reference_trajectory(max(dm.c @ x0, 1e-6), cfg)
        wq = math.sqrt(cfg.q_weight)
        wr = np.tile(np.sqrt(plan.weights), nc)
        lhs = np.vstack([wq * s, np.diag(wr)])
        rhs = np.concatenate([wq * (ref - y_free), np.zeros(nc * nu)])
        lo = np.tile(-plan.base, nc)
        hi = np.tile(plan.upper - plan.base, nc)
        res = lsq_linear(lhs, rhs, bounds=(lo, hi), method="bvls")
        if not res.success or not np.all(np.isfinite(res.x)):
            raise RuntimeError(f"horizon problem failed: {res.message}")
        move = np.clip(plan.base + res.x[:nu], 0.0, plan.upper)
        return move

    def step(self, state, insulin_bolus: float = 0.0) -> DoseCommand:
        """Compute, quantize and record the delivery for one step.

        ``insulin_bolus`` (U) comes from meal detection and is delivered in the
        same step; under the fixed-ratio policies it carries pramlintide too.
        """
        cfg = self.cfg
        fallback = False
        frac = cfg.ts / 60.0
        bolus = math.floor(max(insulin_bolus, 0.0) / cfg.insulin_quantum + 1e-9) \
            * cfg.insulin_quantum
        pram_with_bolus = cfg.pram_ratio * bolus if cfg.policy.fixed_ratio else 0.0
        try:
            move = self.optimize(state, (bolus, pram_with_bolus))
        except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("MPC solve failed, falling back to basal: %s", exc)
            fallback = True
            move = np.array([self.u_basal, 0.0])
        ins_rate = float(move[0])
        ins_amt = self._q_ins(ins_rate * frac)

        pol = cfg.policy
        pram_bolus = 0.0
        if pol.fixed_ratio:
            pram_total = self._q_pram(cfg.pram_ratio * (ins_amt + bolus))
            pram_bolus = min(pram_total, cfg.pram_ratio * bolus)
            pram_amt = pram_total - pram_bolus
        elif pol is Policy.INDEPENDENT:
            pram_amt = self._q_pram(float(move[1]) * frac if len(move) > 1 else 0.0)
        elif pol is Policy.BASAL_PRAM:
            pram_amt = self._q_pram(self.basal_pram() * frac)
        else:
            pram_amt = 0.0

        self._history.append((ins_amt + bolus) / frac)
        return DoseCommand(insulin_rate=ins_amt / frac, pram_rate=pram_amt / frac,
                           insulin_bolus=bolus, pram_bolus=pram_bolus,
                           fallback=fallback)


def mpc_step(state, cfg: MpcConfig, params: ModelParams) -> DoseCommand:
    """One-shot controller evaluation without quantization history."""
    ctl = MpcController(params, cfg.with_(insulin_quantum=1e-12, pram_quantum=1e-12))
    return ctl.step(state)
