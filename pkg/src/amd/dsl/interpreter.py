"""
Batched interpreter for the heuristic language

Values carry a leading batch axis: scalars have shape (B,), vectors (B, L).
Every batch element follows exactly one branch of a conditional, so a program
is evaluated on a whole Monte Carlo batch in one tree walk.
"""

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy.special import expit

from amd import distributions
from amd.dsl.errors import (
    BudgetExceededError,
    DomainError,
    EvaluationError,
    ShapeError,
)
from amd.dsl.expr import (
    BinaryOperator,
    BinOp,
    Call,
    Compare,
    ComparisonOperator,
    Expr,
    HeuristicProgram,
    IfExp,
    Index,
    Let,
    Neg,
    Num,
    SignatureKind,
    Var,
    VectorLit,
)

Array = npt.NDArray[np.float64]
Mask = npt.NDArray[np.bool_]

DEFAULT_STEP_BUDGET = 10_000

# pdf/cdf/survival are evaluated this far inside the support so endpoint
# densities stay finite
SUPPORT_MARGIN = 1e-9

_COMPARISONS: dict[ComparisonOperator, Callable[[Array, Array], Mask]] = {
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
    "==": np.equal,
    "!=": np.not_equal,
}

_DISTRIBUTION_FUNCTIONS = {
    "pdf": distributions.pdf,
    "cdf": distributions.cdf,
    "survival": distributions.survival,
}


@dataclass(frozen=True)
class EvalContext:
    """Bound inputs, the distribution for pdf/cdf/survival and a step budget"""

    bindings: Mapping[str, float | Sequence[float] | Array]
    distribution: distributions.MarginalDistribution | None = None
    step_budget: int = DEFAULT_STEP_BUDGET


def _align(left: Array, right: Array) -> tuple[Array, Array]:
    """Broadcast a scalar against a vector; vectors must have equal lengths"""
    if left.ndim == right.ndim:
        if left.ndim == 2 and left.shape[1] != right.shape[1]:
            raise ShapeError(
                f"vectors of length {left.shape[1]} and {right.shape[1]}"
            )
        return left, right
    if left.ndim == 1:
        return left[:, None], right
    return left, right[:, None]


def _check_finite(values: Array, what: str) -> Array:
    if not np.all(np.isfinite(values)):
        raise DomainError(f"{what} produced a non-finite value")
    return values


def _require_vector(values: Array, func: str) -> Array:
    if values.ndim != 2:
        raise ShapeError(f"{func} needs a vector argument")
    return values


@dataclass
class _Interpreter:
    distribution: distributions.MarginalDistribution | None
    step_budget: int
    steps: int = field(default=0)

    def step(self) -> None:
        self.steps += 1
        if self.steps > self.step_budget:
            raise BudgetExceededError(
                f"evaluation exceeded the budget of {self.step_budget} steps"
            )

    def eval(self, expr: Expr, env: Mapping[str, Array], size: int) -> Array:
        self.step()
        match expr:
            case Num(value):
                return np.full(size, value, dtype=float)

            case Var(name):
                if name not in env:
                    raise EvaluationError(f"unbound name {name!r}")
                return env[name]

            case VectorLit(items):
                values = [self.eval(item, env, size) for item in items]
                if any(value.ndim != 1 for value in values):
                    raise ShapeError("vector items must be scalars")
                return np.stack(values, axis=1)

            case Index(target, index):
                vector = self.eval(target, env, size)
                if vector.ndim != 2:
                    raise ShapeError("cannot index a scalar")
                length = vector.shape[1]
                if not -length <= index < length:
                    raise ShapeError(f"index {index} out of range for length {length}")
                return vector[:, index]

            case BinOp(op, left, right):
                return self.binary(
                    op, self.eval(left, env, size), self.eval(right, env, size)
                )

            case Neg(operand):
                return -self.eval(operand, env, size)

            case Compare():
                raise EvaluationError("comparison outside a conditional")

            case IfExp(test, body, orelse):
                return self.conditional(test, body, orelse, env, size)

            case Call(func, args):
                return self.call(func, [self.eval(arg, env, size) for arg in args])

            case Let(bindings, body):
                scoped = dict(env)
                for binding in bindings:
                    self.step()
                    scoped[binding.name] = self.eval(binding.value, scoped, size)
                return self.eval(body, scoped, size)

        raise EvaluationError(f"unknown node {type(expr).__name__}")

    def binary(self, op: BinaryOperator, left: Array, right: Array) -> Array:
        left, right = _align(left, right)
        with np.errstate(all="ignore"):
            match op:
                case "+":
                    result = left + right
                case "-":
                    result = left - right
                case "*":
                    result = left * right
                case "/":
                    if np.any(right == 0):
                        raise DomainError("division by zero")
                    result = left / right
                case "**":
                    left, right = np.broadcast_arrays(left, right)
                    fractional = right != np.round(right)
                    if np.any((left < 0) & fractional):
                        raise DomainError("fractional power of a negative number")
                    if np.any((left == 0) & (right < 0)):
                        raise DomainError("zero raised to a negative power")
                    result = np.power(left, right)
        return _check_finite(result, op)

    def compare(self, test: Compare, env: Mapping[str, Array], size: int) -> Mask:
        self.step()
        left = self.eval(test.left, env, size)
        right = self.eval(test.right, env, size)
        if left.ndim != 1 or right.ndim != 1:
            raise ShapeError("conditions must compare scalars")
        return _COMPARISONS[test.op](left, right)

    def conditional(
        self,
        test: Compare,
        body: Expr,
        orelse: Expr,
        env: Mapping[str, Array],
        size: int,
    ) -> Array:
        mask = self.compare(test, env, size)
        if mask.all():
            return self.eval(body, env, size)
        if not mask.any():
            return self.eval(orelse, env, size)

        true_part = self.eval(body, _select(env, mask), int(mask.sum()))
        false_part = self.eval(orelse, _select(env, ~mask), int((~mask).sum()))
        if true_part.shape[1:] != false_part.shape[1:]:
            raise ShapeError("branches of a conditional have different shapes")

        result = np.empty((size, *true_part.shape[1:]), dtype=float)
        result[mask] = true_part
        result[~mask] = false_part
        return result

    def call(self, func: str, args: list[Array]) -> Array:
        match func:
            case "min" | "max":
                if len(args) == 1:
                    (values,) = args
                    if values.ndim == 1:
                        return values
                    return values.min(axis=1) if func == "min" else values.max(axis=1)
                ufunc = np.minimum if func == "min" else np.maximum
                result = args[0]
                for arg in args[1:]:
                    result = ufunc(*_align(result, arg))
                return result
            case "abs":
                return np.abs(args[0])
            case "sum":
                return _require_vector(args[0], func).sum(axis=1)
            case "mean":
                return _require_vector(args[0], func).mean(axis=1)
            case "median":
                return np.median(_require_vector(args[0], func), axis=1)
            case "len":
                vector = _require_vector(args[0], func)
                return np.full(vector.shape[0], vector.shape[1], dtype=float)
            case "sorted":
                return np.sort(_require_vector(args[0], func), axis=1)
            case "exp":
                with np.errstate(over="ignore"):
                    return _check_finite(np.exp(args[0]), func)
            case "log":
                if np.any(args[0] <= 0):
                    raise DomainError("log of a nonpositive number")
                return np.log(args[0])
            case "sqrt":
                if np.any(args[0] < 0):
                    raise DomainError("sqrt of a negative number")
                return np.sqrt(args[0])
            case "sigmoid":
                return expit(args[0])
            case "pdf" | "cdf" | "survival":
                return self.distribution_call(func, args[0])
        raise EvaluationError(f"unknown builtin {func!r}")

    def distribution_call(self, func: str, values: Array) -> Array:
        if self.distribution is None:
            raise EvaluationError(f"{func} needs a distribution")
        lo, hi = distributions.support(self.distribution)
        if np.any((values < lo) | (values > hi)):
            raise DomainError(f"{func} argument outside [{lo:g}, {hi:g}]")
        clipped = np.clip(values, lo + SUPPORT_MARGIN, hi - SUPPORT_MARGIN)
        try:
            result = np.asarray(
                _DISTRIBUTION_FUNCTIONS[func](self.distribution, clipped), dtype=float
            )
        except distributions.DistributionError as e:
            raise DomainError(str(e)) from e
        return _check_finite(result, func)


def _select(env: Mapping[str, Array], mask: Mask) -> dict[str, Array]:
    return {name: value[mask] for name, value in env.items()}


def evaluate_expression(
    expr: Expr,
    env: Mapping[str, Array],
    size: int,
    *,
    distribution: distributions.MarginalDistribution | None = None,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> Array:
    """Evaluate a bare expression on a batch of `size` environments"""
    interpreter = _Interpreter(distribution=distribution, step_budget=step_budget)
    result = interpreter.eval(expr, env, size)
    return _check_finite(result, "expression")


def _check_output(program: HeuristicProgram, result: Array) -> Array:
    signature = program.signature
    if signature.kind is SignatureKind.JOINT_ALLOCATION:
        if result.ndim != 2:
            raise ShapeError("heuristic must return a vector")
        expected = signature.output_length
        if expected is not None and result.shape[1] != expected:
            raise ShapeError(
                f"heuristic returned length {result.shape[1]}, expected {expected}"
            )
    elif result.ndim != 1:
        raise ShapeError("heuristic must return a scalar")
    return result


def evaluate_batch(
    program: HeuristicProgram,
    *inputs: npt.ArrayLike,
    distribution: distributions.MarginalDistribution | None = None,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> Array:
    """
    Evaluate program on a batch of inputs, one array per parameter

    Scalar parameters take shape (B,) and vector parameters (B, L). Any error
    on any batch element fails the whole batch.
    """
    params = program.ast.params
    if len(inputs) != len(params):
        raise ShapeError(f"expected {len(params)} input(s), got {len(inputs)}")

    signature = program.signature
    expected_ndim = 2 if signature.vector_input else 1
    env: dict[str, Array] = {}
    for name, raw in zip(params, inputs):
        values = np.asarray(raw, dtype=float)
        if values.ndim != expected_ndim:
            raise ShapeError(f"input {name!r} must have {expected_ndim} dimension(s)")
        if (
            signature.input_length is not None
            and values.shape[1] != signature.input_length
        ):
            raise ShapeError(
                f"input {name!r} has length {values.shape[1]}, "
                f"expected {signature.input_length}"
            )
        env[name] = values

    size = env[params[0]].shape[0] if params else 1
    result = evaluate_expression(
        program.ast.body,
        env,
        size,
        distribution=distribution,
        step_budget=step_budget,
    )
    return _check_output(program, result)


def evaluate(program: HeuristicProgram, ctx: EvalContext) -> float | Array:
    """Evaluate program on a single input; vectors come back as 1-D arrays"""
    inputs = []
    for name in program.ast.params:
        if name not in ctx.bindings:
            raise EvaluationError(f"no value bound for parameter {name!r}")
        inputs.append(np.asarray(ctx.bindings[name], dtype=float)[None, ...])

    result = evaluate_batch(
        program,
        *inputs,
        distribution=ctx.distribution,
        step_budget=ctx.step_budget,
    )
    if result.ndim == 1:
        return float(result[0])
    return result[0]
