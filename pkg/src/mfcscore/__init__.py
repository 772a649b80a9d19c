"""Mean field control solved by a neural HJB approximation trained on
deterministic forward-backward score dynamics, with an FBSDE baseline."""

from . import cli, dynamics, kde, metrics, net, problems, svgplot, tape, training
from .dynamics import (
    RolloutConfig,
    RolloutDivergence,
    TrajectoryBatch,
    rollout_exact,
    rollout_fbsde,
    rollout_score,
)
from .kde import KdeCloud
from .metrics import RunReport, gaussian_w2, rel_l2
from .net import NetConfig, NetParams, TerminalWrapper, init_params, phi_eval
from .problems import (
    EntropyPotentialProblem,
    LinearQuadraticProblem,
    PROBLEM_IDS,
    SystemicRiskProblem,
    build_problem,
)
from .tape import Tape
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "cli",
    "dynamics",
    "kde",
    "metrics",
    "net",
    "problems",
    "svgplot",
    "tape",
    "training",
    "RolloutConfig",
    "RolloutDivergence",
    "TrajectoryBatch",
    "rollout_exact",
    "rollout_fbsde",
    "rollout_score",
    "KdeCloud",
    "RunReport",
    "gaussian_w2",
    "rel_l2",
    "NetConfig",
    "NetParams",
    "TerminalWrapper",
    "init_params",
    "phi_eval",
    "EntropyPotentialProblem",
    "LinearQuadraticProblem",
    "PROBLEM_IDS",
    "SystemicRiskProblem",
    "build_problem",
    "Tape",
    "TrainConfig",
    "TrainResult",
    "train",
    "__version__",
]
