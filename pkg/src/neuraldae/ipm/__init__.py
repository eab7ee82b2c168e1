from .lbfgs import LbfgsMemory, lbfgs_update
from .linsolve import LdlFactor, SingularMatrix
from .nlp import ExprNlp, StandardNlp
from .solver import (
    IpmIterate,
    IpmOptions,
    IpmSolution,
    SingularSystem,
    assemble_and_solve_step,
    kkt_residual,
    solve,
)

__all__ = [
    "ExprNlp",
    "IpmIterate",
    "IpmOptions",
    "IpmSolution",
    "LbfgsMemory",
    "LdlFactor",
    "SingularMatrix",
    "SingularSystem",
    "StandardNlp",
    "assemble_and_solve_step",
    "kkt_residual",
    "lbfgs_update",
    "solve",
]
