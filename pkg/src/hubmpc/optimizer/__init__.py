from .bnb import pair_products, solve_with_complementarity
from .certificate import Certificate, certify_solution
from .lp import (
    COMP_TOL,
    FEAS_TOL,
    GAP_TOL,
    ComplementarityPair,
    LinearProgram,
    LPBuilder,
    NumericalError,
    SolveResult,
    read_lp_text,
    solve_lp,
    write_lp_text,
)

__all__ = [
    "COMP_TOL", "FEAS_TOL", "GAP_TOL", "Certificate", "ComplementarityPair",
    "LPBuilder", "LinearProgram", "NumericalError", "SolveResult", "certify_solution",
    "pair_products", "read_lp_text", "solve_lp", "solve_with_complementarity",
    "write_lp_text",
]
