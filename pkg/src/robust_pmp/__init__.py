"""Robust training of residual networks through explicit adjoint sweeps.

The layers of a residual network are read as an Euler discretisation of a
controlled ODE.  Distributionally robust objectives become regularised
control problems, and their gradients come from forward and backward sweeps.
"""

from .errors import (
    CapabilityError,
    ConfigError,
    DatasetParseError,
    DegenerateGradientError,
    NumericOverflowError,
    ShapeError,
    TrainingDivergedError,
    UnboundedDualError,
)
from .model import (
    ControlPath,
    Model,
    NormSpec,
    RunningCost,
    conjugate_exponents,
    d_f,
    d_loss,
    dual_norm,
    dual_norm_subgradient,
    eval_f,
    eval_loss,
    ground_norm,
    make_dynamics,
    make_loss,
)
from .objectives import (
    EmpiricalMeasure,
    RegularizerSpec,
    curvature_exact_objective,
    curvature_mc_objective,
    evaluate,
    first_order_objective,
    loss_j,
    risk,
    second_order_v1_objective,
)
from .trainer import TrainConfig, TrainReport, train, train_clean, train_fgsm, train_first_order, train_second_order
from .adversary import AttackConfig, AttackResult, dual_value, pga_attack_pointwise, pga_attack_wasserstein, robust_risk_oracle, solve_dual

__version__ = "0.1.0"
