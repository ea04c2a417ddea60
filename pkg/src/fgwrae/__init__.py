"""Fused Gromov-Wasserstein distances and relational regularized autoencoders."""

from .errors import InvalidInputError, InvalidStateError, ParseError, SolverDegenerateError
from .ot_core import FgwSolverOpts, TransportPlan, empirical_fgw, sinkhorn, solve_fgw_discrete
from .gaussian_ot import DiagGaussian, GaussianMixture, gaussian_w2_diag, hierarchical_fgw
from .sliced_ot import brute_force_fgw_1d, fgw_1d, sample_projections, sliced_fgw
from .data_io import PointCloud, RngStream, gen_clusters, gen_two_view
from .rae import TrainConfig, conditional_generate, train_drae, train_prae
from .cotrain import CoTrainConfig, cotrain, eval_multiview

__version__ = "0.1.0"

__all__ = [
    "InvalidInputError", "InvalidStateError", "ParseError", "SolverDegenerateError",
    "FgwSolverOpts", "TransportPlan", "empirical_fgw", "sinkhorn", "solve_fgw_discrete",
    "DiagGaussian", "GaussianMixture", "gaussian_w2_diag", "hierarchical_fgw",
    "brute_force_fgw_1d", "fgw_1d", "sample_projections", "sliced_fgw",
    "PointCloud", "RngStream", "gen_clusters", "gen_two_view",
    "TrainConfig", "conditional_generate", "train_drae", "train_prae",
    "CoTrainConfig", "cotrain", "eval_multiview",
]
