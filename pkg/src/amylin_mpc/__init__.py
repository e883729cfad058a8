"""Insulin and pramlintide closed-loop simulation.

A ten-state glucoregulatory model with pramlintide pharmacokinetics and its
effect on gastric emptying, local linearizations for model predictive
control, a meal detector, outcome metrics, a cohort harness that compares
delivery policies, and a small PK/PD model zoo with fitting tools.
"""
from .controller import (DoseCommand, MpcConfig, MpcController, Policy, basal_pram_rate,
                         mpc_step, reference_trajectory)
from .linearize import (DiscreteModel, LinearModel, discretize, jacobian, linearize_foh,
                        linearize_zoh)
from .mdd import MddConfig, MealDetection, MealDetector, detect_meals, dose_for_meal, mdd_stats
from .model import (ModelInputs, ModelParams, ModelState, carb_gain, integrate_step,
                    model_rhs, pram_effect, simulate, steady_state, zero_input_equilibrium)
from .outcomes import OutcomeSummary, bgi, low_events, range_percents, summarize
from .sim import (Scenario, SimTrace, aggregate, default_meal_schedule, generate_cohort,
                  run_arms, run_scenario)

__version__ = "0.1.0"

__all__ = [
    "DiscreteModel", "DoseCommand", "LinearModel", "MddConfig", "MealDetection",
    "MealDetector", "ModelInputs", "ModelParams", "ModelState", "MpcConfig",
    "MpcController", "OutcomeSummary", "Policy", "Scenario", "SimTrace", "aggregate",
    "basal_pram_rate", "bgi", "carb_gain", "default_meal_schedule", "detect_meals",
    "discretize", "dose_for_meal", "generate_cohort", "integrate_step", "jacobian",
    "linearize_foh", "linearize_zoh", "low_events", "mdd_stats", "model_rhs",
    "mpc_step", "pram_effect", "range_percents", "reference_trajectory", "run_arms",
    "run_scenario", "simulate", "steady_state", "summarize", "zero_input_equilibrium",
]
