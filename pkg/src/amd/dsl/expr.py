"""
Syntax tree of the heuristic language

Every node is an immutable dataclass, so trees compare structurally and can be
shared freely between threads.
"""

from dataclasses import dataclass
from enum import Enum, unique
from typing import Literal, get_args

BinaryOperator = Literal["+", "-", "*", "/", "**"]
ComparisonOperator = Literal["<", "<=", ">", ">=", "==", "!="]
BuiltinName = Literal[
    "min",
    "max",
    "abs",
    "sum",
    "mean",
    "median",
    "sorted",
    "len",
    "exp",
    "log",
    "sqrt",
    "sigmoid",
    "pdf",
    "cdf",
    "survival",
]

BINARY_OPERATORS: tuple[BinaryOperator, ...] = get_args(BinaryOperator)
COMPARISON_OPERATORS: tuple[ComparisonOperator, ...] = get_args(ComparisonOperator)
BUILTINS: tuple[BuiltinName, ...] = get_args(BuiltinName)

DISTRIBUTION_BUILTINS: tuple[BuiltinName, ...] = ("pdf", "cdf", "survival")
REDUCTIONS: tuple[BuiltinName, ...] = ("sum", "mean", "median", "len")
ELEMENTWISE_BUILTINS: tuple[BuiltinName, ...] = (
    "abs",
    "exp",
    "log",
    "sqrt",
    "sigmoid",
    *DISTRIBUTION_BUILTINS,
)


@dataclass(frozen=True, slots=True)
class Num:
    value: float


@dataclass(frozen=True, slots=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True)
class VectorLit:
    items: "tuple[Expr, ...]"


@dataclass(frozen=True, slots=True)
class Index:
    target: "Expr"
    index: int


@dataclass(frozen=True, slots=True)
class BinOp:
    op: BinaryOperator
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True, slots=True)
class Compare:
    op: ComparisonOperator
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class IfExp:
    test: Compare
    body: "Expr"
    orelse: "Expr"


@dataclass(frozen=True, slots=True)
class Call:
    func: BuiltinName
    args: "tuple[Expr, ...]"


@dataclass(frozen=True, slots=True)
class Binding:
    name: str
    value: "Expr"


@dataclass(frozen=True, slots=True)
class Let:
    bindings: tuple[Binding, ...]
    body: "Expr"


Expr = Num | Var | VectorLit | Index | BinOp | Neg | Compare | IfExp | Call | Let


@dataclass(frozen=True, slots=True)
class Function:
    """The function wrapper; its name is not part of the tree"""

    params: tuple[str, ...]
    body: Expr


def let(bindings: tuple[Binding, ...], body: Expr) -> Expr:
    """Construct a let block, collapsing it when there are no bindings"""
    if not bindings:
        return body
    return Let(bindings, body)


def negate(expr: Expr) -> Expr:
    """Negate expr, folding numeric literals like the parser does"""
    if isinstance(expr, Num):
        return Num(-expr.value)
    return Neg(expr)


def children(expr: Expr) -> tuple[Expr, ...]:
    """Return the direct sub-expressions of expr"""
    match expr:
        case Num() | Var():
            return ()
        case VectorLit(items):
            return items
        case Index(target, _):
            return (target,)
        case BinOp(_, left, right) | Compare(_, left, right):
            return (left, right)
        case Neg(operand):
            return (operand,)
        case IfExp(test, body, orelse):
            return (test, body, orelse)
        case Call(_, args):
            return args
        case Let(bindings, body):
            return (*(binding.value for binding in bindings), body)


@unique
class SignatureKind(str, Enum):
    PER_BIDDER_SCORE = "per_bidder_score"
    JOINT_ALLOCATION = "joint_allocation"
    REDISTRIBUTION = "redistribution"


DEFAULT_PARAMETER_NAMES = {
    SignatureKind.PER_BIDDER_SCORE: "v",
    SignatureKind.JOINT_ALLOCATION: "bids",
    SignatureKind.REDISTRIBUTION: "others_bids",
}


@dataclass(frozen=True, slots=True)
class HeuristicSignature:
    """
    Input/output shape of a heuristic

    input_length is the length of the vector input (n for joint allocation,
    n - 1 for redistribution) and None for per-bidder scores.
    """

    kind: SignatureKind
    arity: int = 1
    input_length: int | None = None

    @property
    def vector_input(self) -> bool:
        return self.kind is not SignatureKind.PER_BIDDER_SCORE

    @property
    def output_length(self) -> int | None:
        """Length of the returned vector, None for scalar outputs"""
        if self.kind is SignatureKind.JOINT_ALLOCATION:
            return None if self.input_length is None else self.input_length + 1
        return None

    @property
    def parameter_name(self) -> str:
        return DEFAULT_PARAMETER_NAMES[self.kind]


def per_bidder_signature() -> HeuristicSignature:
    return HeuristicSignature(SignatureKind.PER_BIDDER_SCORE)


def joint_allocation_signature(n_bidders: int) -> HeuristicSignature:
    return HeuristicSignature(SignatureKind.JOINT_ALLOCATION, input_length=n_bidders)


def redistribution_signature(n_bidders: int) -> HeuristicSignature:
    return HeuristicSignature(
        SignatureKind.REDISTRIBUTION, input_length=n_bidders - 1
    )


@dataclass(frozen=True, slots=True)
class HeuristicProgram:
    """A candidate heuristic: its source text and parsed tree"""

    source: str
    ast: Function
    signature: HeuristicSignature
