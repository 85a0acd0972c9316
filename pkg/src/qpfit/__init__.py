"""Reduced-complexity explicit MPC through a parametric-QP network layer."""

__version__ = "0.1.0"

from qpfit.explicit_pwa import enumerate_regions, locate_and_eval
from qpfit.models import (
    CondensedQP,
    Dataset,
    LinearMPCProblem,
    ProjectionSpec,
    PWAController,
    QPNetParams,
)
from qpfit.mpc import condense, oracle_control, sample_dataset
from qpfit.qpnet import backward, construct_exact, forward
from qpfit.training import train

__all__ = [
    "LinearMPCProblem",
    "CondensedQP",
    "Dataset",
    "ProjectionSpec",
    "QPNetParams",
    "PWAController",
    "condense",
    "oracle_control",
    "sample_dataset",
    "forward",
    "backward",
    "construct_exact",
    "train",
    "enumerate_regions",
    "locate_and_eval",
    "__version__",
]
