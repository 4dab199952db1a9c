"""
A proposer that edits syntax trees instead of asking a language model

Each strategy maps to one genetic operator:

1. a fresh random expression from the grammar
2. subtree crossover between two parents
3. shrinking: a node is replaced by one of its own subtrees
4. a point mutation: a constant is jittered or an operator swapped, or an
   input grows into input op constant
5. subtree deletion: a subtree is replaced by a leaf

Without a strategy the operator is drawn at random. Parents are inlined into
a single expression first, and every replacement keeps the shape (scalar or
vector length) of the node it replaces, so the result passes the parser's
signature check.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from amd.dsl import DslError, HeuristicSignature, SignatureKind, parse
from amd.dsl.expr import (
    DISTRIBUTION_BUILTINS,
    BinaryOperator,
    BinOp,
    BuiltinName,
    Call,
    Compare,
    ComparisonOperator,
    Expr,
    Function,
    IfExp,
    Index,
    Let,
    Neg,
    Num,
    Var,
    VectorLit,
    children,
)
from amd.dsl.parsing import infer_shape
from amd.dsl.printing import expression_size, format_function
from amd.mechanisms.settings import Distillation, SettingSpec, VcgRedistribution
from amd.mechanisms.settings import setting_signature
from amd.proposers.base import ProposalRequest

logger = logging.getLogger(__name__)

N_OPERATORS = 5

DEFAULT_CONSTANTS = (0.0, 0.5, 1.0, 2.0)
UNARY_BUILTINS: tuple[BuiltinName, ...] = ("abs", "sqrt", "exp", "log", "sigmoid")
BINARY_OPERATORS: tuple[BinaryOperator, ...] = ("+", "-", "*", "/")
AGGREGATES: tuple[BuiltinName, ...] = ("min", "max", "sum", "mean", "median")

# Depth of fresh random expressions
MAX_DEPTH = 3

# Chance of stopping early at each level of a fresh expression
LEAF_PROBABILITY = 0.3

# Larger results are cut down by deleting subtrees
MAX_SIZE = 40

# Constants are scaled by a log-uniform factor in [1 / 1.1, 1.1]
JITTER = 1.1

# Operator and constant pairs that leave an input unchanged or drop it
DEGENERATE_GROWTHS = frozenset(
    {("+", 0.0), ("-", 0.0), ("*", 0.0), ("*", 1.0), ("/", 0.0), ("/", 1.0)}
)

SWAP_GROUPS: tuple[tuple[str, ...], ...] = (
    ("+", "-"),
    ("*", "/"),
    ("min", "max"),
    ("sum", "mean", "median"),
    ("abs", "sqrt", "exp", "log", "sigmoid"),
    ("pdf", "cdf", "survival"),
    ("<", "<=", ">", ">="),
)

Path = tuple[int, ...]
Shape = str | int | None


@dataclass(frozen=True, slots=True)
class Grammar:
    """The expressions random generation and mutation draw from"""

    signature: HeuristicSignature
    constants: tuple[float, ...] = DEFAULT_CONSTANTS
    unary: tuple[BuiltinName, ...] = UNARY_BUILTINS
    binary: tuple[BinaryOperator, ...] = BINARY_OPERATORS

    @property
    def parameter(self) -> str:
        return self.signature.parameter_name

    @property
    def input_shape(self) -> Shape:
        if not self.signature.vector_input:
            return "scalar"
        return self.signature.input_length

    @property
    def output_shape(self) -> Shape:
        output_length = self.signature.output_length
        return "scalar" if output_length is None else output_length

    def input_terminals(self) -> tuple[Expr, ...]:
        """Scalar leaves built from the heuristic's input"""
        parameter = Var(self.parameter)
        match self.signature.kind:
            case SignatureKind.PER_BIDDER_SCORE:
                return (parameter,)
            case SignatureKind.JOINT_ALLOCATION:
                assert self.signature.input_length is not None
                return tuple(
                    Index(parameter, i) for i in range(self.signature.input_length)
                )
            case SignatureKind.REDISTRIBUTION:
                assert self.signature.input_length is not None
                return (
                    *(Index(parameter, i) for i in range(self.signature.input_length)),
                    Call("min", (parameter,)),
                    Call("max", (parameter,)),
                    Call("mean", (parameter,)),
                )

    def shape(self, expr: Expr) -> Shape:
        return infer_shape(expr, {self.parameter: self.input_shape})


def grammar_for(
    setting: SettingSpec, constants: tuple[float, ...] = DEFAULT_CONSTANTS
) -> Grammar:
    """
    The grammar for heuristics of the setting

    pdf, cdf and survival are only offered when the heuristic is evaluated
    with a value distribution.
    """
    inner = setting.inner if isinstance(setting, Distillation) else setting
    has_distribution = inner.marginal is not None and (
        isinstance(setting, Distillation) or not isinstance(setting, VcgRedistribution)
    )
    unary = UNARY_BUILTINS
    if has_distribution:
        unary = (*unary, *DISTRIBUTION_BUILTINS)
    return Grammar(setting_signature(setting), constants=constants, unary=unary)


def with_children(expr: Expr, new: Sequence[Expr]) -> Expr:
    """expr with its direct sub-expressions replaced, in children order"""
    match expr:
        case Num() | Var():
            return expr
        case VectorLit():
            return VectorLit(tuple(new))
        case Index(_, index):
            return Index(new[0], index)
        case BinOp(op, _, _):
            return BinOp(op, new[0], new[1])
        case Compare(op, _, _):
            return Compare(op, new[0], new[1])
        case Neg():
            return Neg(new[0])
        case IfExp():
            test = new[0]
            assert isinstance(test, Compare)
            return IfExp(test, new[1], new[2])
        case Call(func, _):
            return Call(func, tuple(new))
        case Let():
            raise ValueError("let blocks must be inlined first")


def inline(expr: Expr, env: dict[str, Expr]) -> Expr:
    """Substitute every bound name, turning the body into a single expression"""
    match expr:
        case Var(name):
            return env.get(name, expr)
        case Let(bindings, body):
            scoped = dict(env)
            for binding in bindings:
                scoped[binding.name] = inline(binding.value, scoped)
            return inline(body, scoped)
    return with_children(expr, [inline(child, env) for child in children(expr)])


def positions(expr: Expr, path: Path = ()) -> list[tuple[Path, Expr]]:
    """Every replaceable node in pre-order; comparisons are kept in place"""
    result: list[tuple[Path, Expr]] = []
    if not isinstance(expr, Compare):
        result.append((path, expr))
    for i, child in enumerate(children(expr)):
        result.extend(positions(child, (*path, i)))
    return result


def replace_at(expr: Expr, path: Path, new: Expr) -> Expr:
    if not path:
        return new
    first, rest = path[0], path[1:]
    updated = list(children(expr))
    updated[first] = replace_at(updated[first], rest, new)
    return with_children(expr, updated)


class _Operators:
    def __init__(self, grammar: Grammar, rng: np.random.Generator) -> None:
        self.grammar = grammar
        self.rng = rng

    def _pick[T](self, options: Sequence[T]) -> T:
        return options[int(self.rng.integers(len(options)))]

    def terminal(self) -> Expr:
        constants = self.grammar.constants
        if constants and self.rng.random() < 0.3:
            return Num(self._pick(constants))
        return self._pick(self.grammar.input_terminals())

    def scalar(self, depth: int) -> Expr:
        if depth <= 0 or self.rng.random() < LEAF_PROBABILITY:
            return self.terminal()

        match int(self.rng.integers(5)):
            case 0 | 1:
                op = self._pick(self.grammar.binary)
                return BinOp(op, self.scalar(depth - 1), self.scalar(depth - 1))
            case 2:
                return Call(self._pick(self.grammar.unary), (self.scalar(depth - 1),))
            case 3:
                func: BuiltinName = self._pick(("min", "max"))
                return Call(func, (self.scalar(depth - 1), self.scalar(depth - 1)))
            case _:
                comparison: ComparisonOperator = self._pick(("<", ">"))
                return IfExp(
                    Compare(comparison, self.terminal(), self.terminal()),
                    self.scalar(depth - 1),
                    self.scalar(depth - 1),
                )

    def of_shape(self, shape: Shape, depth: int) -> Expr:
        if shape == "scalar":
            return self.scalar(depth)
        assert isinstance(shape, int)
        if (
            shape == self.grammar.signature.input_length
            and self.grammar.signature.vector_input
            and self.rng.random() < 0.5
        ):
            return Var(self.grammar.parameter)
        return VectorLit(tuple(self.scalar(depth - 1) for _ in range(shape)))

    def shaped_positions(self, expr: Expr) -> list[tuple[Path, Expr, Shape]]:
        result = []
        for path, node in positions(expr):
            shape = self.grammar.shape(node)
            if shape == "scalar" or isinstance(shape, int):
                result.append((path, node, shape))
        return result

    def fresh(self) -> Expr:
        depth = int(self.rng.integers(1, MAX_DEPTH + 1))
        return self.of_shape(self.grammar.output_shape, depth)

    def crossover(self, receiver: Expr, donor: Expr) -> Expr:
        receiver_positions = self.shaped_positions(receiver)
        if not receiver_positions:
            return receiver
        path, _, shape = self._pick(receiver_positions)
        matching = [node for _, node, s in self.shaped_positions(donor) if s == shape]
        if not matching:
            return receiver
        return replace_at(receiver, path, self._pick(matching))

    def shrink(self, expr: Expr) -> Expr:
        candidates = []
        for path, node, shape in self.shaped_positions(expr):
            smaller = [
                sub
                for sub_path, sub, sub_shape in self.shaped_positions(node)
                if sub_path and sub_shape == shape
            ]
            if smaller:
                candidates.append((path, smaller))
        if not candidates:
            return self.delete(expr)
        path, smaller = self._pick(candidates)
        return replace_at(expr, path, self._pick(smaller))

    def jitter(self, value: float) -> float:
        if value == 0:
            return round(float(self.rng.uniform(-0.1, 0.1)), 4)
        factor = math.exp(self.rng.uniform(-math.log(JITTER), math.log(JITTER)))
        return float(f"{value * factor:.4g}")

    def point_mutation(self, expr: Expr) -> Expr:
        candidates: list[tuple[Path, Expr]] = []
        terminals = self.grammar.input_terminals()
        for path, node in self._all_nodes(expr):
            match node:
                case Num():
                    candidates.append((path, Num(self.jitter(node.value))))
                case BinOp(op, _, _) | Compare(op, _, _):
                    alternatives = self._swaps(op)
                    if alternatives:
                        other = self._pick(alternatives)
                        candidates.append((path, _with_operator(node, other)))
                case Call(func, args):
                    allowed = (*self.grammar.unary, *AGGREGATES)
                    builtins = [name for name in allowed if name in self._swaps(func)]
                    if builtins:
                        candidates.append((path, Call(self._pick(builtins), args)))
            if node in terminals and (grown := self.grow(node)) is not None:
                candidates.append((path, grown))
        if not candidates:
            return self.fresh()
        path, replacement = self._pick(candidates)
        return replace_at(expr, path, replacement)

    def grow(self, node: Expr) -> Expr | None:
        """node combined with a constant, None without a constant that changes it"""
        options = [
            (op, constant)
            for op in self.grammar.binary
            for constant in self.grammar.constants
            if (op, constant) not in DEGENERATE_GROWTHS
        ]
        if not options:
            return None
        op, constant = self._pick(options)
        return BinOp(op, node, Num(constant))

    def delete(self, expr: Expr) -> Expr:
        candidates = [
            (path, shape)
            for path, node, shape in self.shaped_positions(expr)
            if expression_size(node) > 1
        ]
        if not candidates:
            return self.fresh()
        path, shape = self._pick(candidates)
        return replace_at(expr, path, self.of_shape(shape, 0))

    def cap_size(self, expr: Expr) -> Expr:
        while expression_size(expr) > MAX_SIZE:
            candidates = [
                (path, shape)
                for path, node, shape in self.shaped_positions(expr)
                if path and expression_size(node) > _largest_leaf(shape)
            ]
            if not candidates:
                return self.fresh()
            path, shape = self._pick(candidates)
            expr = replace_at(expr, path, self.of_shape(shape, 0))
        return expr

    @staticmethod
    def _swaps(name: str) -> list[str]:
        for group in SWAP_GROUPS:
            if name in group:
                return [other for other in group if other != name]
        return []

    @staticmethod
    def _all_nodes(expr: Expr, path: Path = ()) -> list[tuple[Path, Expr]]:
        result: list[tuple[Path, Expr]] = [(path, expr)]
        for i, child in enumerate(children(expr)):
            result.extend(_Operators._all_nodes(child, (*path, i)))
        return result


def _largest_leaf(shape: Shape) -> int:
    """Size bound of what of_shape(shape, 0) returns"""
    return shape + 1 if isinstance(shape, int) else 1


def _with_operator(node: Expr, op: str) -> Expr:
    match node:
        case BinOp(_, left, right):
            return BinOp(op, left, right)  # type: ignore [arg-type]
        case Compare(_, left, right):
            return Compare(op, left, right)  # type: ignore [arg-type]
    return node


def random_expression(grammar: Grammar, rng: np.random.Generator) -> Expr:
    """A fresh expression of the grammar's output shape, cut down to MAX_SIZE"""
    operators = _Operators(grammar, rng)
    return operators.cap_size(operators.fresh())


def as_expression(function: Function, grammar: Grammar) -> Expr:
    """The function body inlined, with its parameter renamed to the grammar's"""
    env: dict[str, Expr] = {
        name: Var(grammar.parameter) for name in function.params
    }
    return inline(function.body, env)


def apply_operator(
    operator: int,
    parents: Sequence[Expr],
    grammar: Grammar,
    rng: np.random.Generator,
) -> Expr:
    """Apply operator 1-5 to the parents, the last of which is the best"""
    if operator == 1:
        return random_expression(grammar, rng)

    operators = _Operators(grammar, rng)
    receiver = parents[-1]
    match operator:
        case 2:
            donor = parents[int(rng.integers(len(parents)))]
            result = operators.crossover(receiver, donor)
        case 3:
            result = operators.shrink(receiver)
        case 4:
            result = operators.point_mutation(receiver)
        case 5:
            result = operators.delete(receiver)
        case _:
            raise ValueError(f"Unknown operator {operator}")
    return operators.cap_size(result)


def symbolic_propose(request: ProposalRequest, rng: np.random.Generator) -> str:
    """
    Edit the parents with the operator of the request's strategy

    Returns the canonical source of the result.
    """
    grammar = grammar_for(request.setting)
    parents = [as_expression(parent.program.ast, grammar) for parent in request.parents]

    if request.strategy_id is None:
        operator = int(rng.integers(1, N_OPERATORS + 1))
    else:
        operator = (request.strategy_id - 1) % N_OPERATORS + 1

    result = apply_operator(operator, parents, grammar, rng)
    source = format_function(Function((grammar.parameter,), result))

    try:
        parse(source, grammar.signature)
    except DslError as e:
        logger.warning(f"Operator {operator} produced an invalid heuristic: {e}")
        return format_function(Function((grammar.parameter,), parents[-1]))

    logger.debug(f"Operator {operator} proposed {source!r}")
    return source


class SymbolicProposer:
    """Proposer running the genetic operators locally"""

    def propose(self, request: ProposalRequest, rng: np.random.Generator) -> str:
        return symbolic_propose(request, rng)
