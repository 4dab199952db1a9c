"""The sandboxed heuristic language candidate mechanisms are written in"""

from amd.dsl.errors import (
    BudgetExceededError,
    DomainError,
    DslError,
    DslSyntaxError,
    EvaluationError,
    ForbiddenConstructError,
    ShapeError,
    SignatureMismatchError,
)
from amd.dsl.expr import (
    HeuristicProgram,
    HeuristicSignature,
    SignatureKind,
    joint_allocation_signature,
    per_bidder_signature,
    redistribution_signature,
)
from amd.dsl.interpreter import EvalContext, evaluate, evaluate_batch
from amd.dsl.parsing import parse
from amd.dsl.printing import pretty_print, structural_size

__all__ = [
    "BudgetExceededError",
    "DomainError",
    "DslError",
    "DslSyntaxError",
    "EvalContext",
    "EvaluationError",
    "ForbiddenConstructError",
    "HeuristicProgram",
    "HeuristicSignature",
    "ShapeError",
    "SignatureKind",
    "SignatureMismatchError",
    "evaluate",
    "evaluate_batch",
    "joint_allocation_signature",
    "parse",
    "per_bidder_signature",
    "pretty_print",
    "redistribution_signature",
    "structural_size",
]
