"""Per-step convex QP of the tracking controller."""

from .backend import BACKEND, KERNELS, get_kernel
from .oracles import UnsupportedOracleError, enumerate_active_sets, lp_box_inf_oracle, lp_box_sup_oracle
from .problem import (
    CORE_VARS, DU, AssemblyError, DenseQP, DenseSolution, KktResiduals, Multipliers, QpProblem,
    QpSolution, QpWeights, assemble, dense_kkt_residuals, format_problem, kkt_residuals, solve,
    solve_dense_qp,
)

__all__ = [
    "BACKEND", "KERNELS", "get_kernel", "UnsupportedOracleError", "enumerate_active_sets",
    "lp_box_inf_oracle", "lp_box_sup_oracle", "CORE_VARS", "DU", "AssemblyError", "DenseQP",
    "DenseSolution", "KktResiduals", "Multipliers", "QpProblem", "QpSolution", "QpWeights",
    "assemble", "dense_kkt_residuals", "format_problem", "kkt_residuals", "solve", "solve_dense_qp",
]
