"""Application builders: each returns a ``ProblemInstance``."""
from .base import ProblemInstance, as_dense, coordinate_run, fixed_point_reference
from .finance import Portfolio3SOperator, build_portfolio, portfolio_data
from .imaging import (BundledOperator, build_mesh_denoise, build_tv_reconstruction, grid_gradient,
                      piecewise_constant_image, sampling_operator)
from .learning import (LogisticL1Operator, SVMUnbiasedOperator, SVM3SOperator, build_erm, build_group_lasso,
                       build_least_squares, build_logistic_l1, build_svm_biased_3s, build_svm_biased_pd,
                       build_svm_unbiased, erm_dual_prox, gaussian_kernel, svm_gram)
from .network import NetworkFBFOperator, build_network_consensus
from .nmf import NMFOperator, build_nmf
from .socp import FactorizationError, SocpDRSOperator, build_socp_drs, drs_affine_reflection

__all__ = [n for n in dir() if not n.startswith("_")]
