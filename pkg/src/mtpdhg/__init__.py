"""Multi-timescale primal-dual solvers for block-decomposable saddle problems."""

from mtpdhg.consensus import (PenaltyPlan, SimilarityModel, Topology,
                              build_hierarchical_K, lift_problem,
                              make_penalties, orthogonality_defect,
                              projector_apply, sigma_min_plus, warm_start,
                              warm_start_epsilon)
from mtpdhg.geometry import (Ball, Box, BregmanGeometry, ConvexDomain,
                             FreeSpace, NonnegativeOrthant, ProductDomain,
                             divergence, prox_dual, prox_linear)
from mtpdhg.metrics import (MetricRow, eps_delta_check, gap_components,
                            gap_sup_y, kkt_residual, rate_fit,
                            write_trace_csv)
from mtpdhg.problem import (DualBlock, PrimalDualPoint, SaddleProblem,
                            hinge_ridge_objective, lagrangian,
                            linear_objective, operator_norm_estimate,
                            primal_value, quadratic_objective)
from mtpdhg.simnet import (CostModel, MessageLedger, amortized_cost,
                           rate_advisor, simulate)
from mtpdhg.sliding import (DeltaAudit, InnerConfig, SlidingSchedule,
                            gradient_slide, make_primal_step)
from mtpdhg.solver import (RateSchedule, RunResult, StepParams, amt_params,
                           baseline_pdhg, mt_params, preset_amt, preset_mt,
                           recommended_inner_T, run)

__version__ = "0.1.0"

__all__ = [
    "Ball", "Box", "BregmanGeometry", "ConvexDomain", "CostModel",
    "DeltaAudit", "DualBlock", "FreeSpace", "InnerConfig", "MessageLedger",
    "MetricRow", "NonnegativeOrthant", "PenaltyPlan", "PrimalDualPoint",
    "ProductDomain", "RateSchedule", "RunResult", "SaddleProblem",
    "SimilarityModel", "SlidingSchedule", "StepParams", "Topology",
    "amortized_cost", "amt_params", "baseline_pdhg", "build_hierarchical_K",
    "divergence", "eps_delta_check", "gap_components", "gap_sup_y",
    "gradient_slide", "hinge_ridge_objective", "kkt_residual", "lagrangian",
    "lift_problem", "linear_objective", "make_penalties", "make_primal_step",
    "mt_params", "operator_norm_estimate", "orthogonality_defect",
    "preset_amt", "preset_mt", "primal_value", "projector_apply", "prox_dual",
    "prox_linear", "quadratic_objective", "rate_advisor", "rate_fit",
    "recommended_inner_T", "run", "sigma_min_plus", "simulate", "warm_start",
    "warm_start_epsilon", "write_trace_csv",
]
