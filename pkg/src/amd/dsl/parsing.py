"""
Translate heuristic source text into the language's syntax tree

The text is read with Python's own parser and then translated node by node
through a whitelist. Anything that is not explicitly translated is rejected,
so no construct outside the grammar can reach the interpreter.
"""

import ast
import math
import textwrap
from dataclasses import dataclass, field

from amd.dsl.errors import (
    DslSyntaxError,
    ForbiddenConstructError,
    SignatureMismatchError,
)
from amd.dsl.expr import (
    BUILTINS,
    ELEMENTWISE_BUILTINS,
    REDUCTIONS,
    BinaryOperator,
    BinOp,
    Binding,
    BuiltinName,
    Call,
    Compare,
    ComparisonOperator,
    Expr,
    Function,
    HeuristicProgram,
    HeuristicSignature,
    IfExp,
    Index,
    Let,
    Neg,
    Num,
    SignatureKind,
    Var,
    VectorLit,
    children,
    let,
)

_LIBRARY_PREFIXES = ("np", "numpy", "math", "torch")

# Qualified or sugared call names rewritten to a builtin before translation.
# "identity" means the call is replaced by its single argument.
CALL_ALIASES: dict[str, BuiltinName | str] = {
    **{f"{prefix}.{name}": name for prefix in _LIBRARY_PREFIXES for name in BUILTINS},
    "np.sort": "sorted",
    "numpy.sort": "sorted",
    "torch.sort": "sorted",
    "np.minimum": "min",
    "numpy.minimum": "min",
    "torch.minimum": "min",
    "np.maximum": "max",
    "numpy.maximum": "max",
    "torch.maximum": "max",
    "np.average": "mean",
    "expit": "sigmoid",
    "scipy.special.expit": "sigmoid",
    "torch.sigmoid": "sigmoid",
    "np.array": "identity",
    "numpy.array": "identity",
    "np.asarray": "identity",
    "torch.tensor": "identity",
    "float": "identity",
}

CONSTANT_ALIASES: dict[str, float] = {
    "np.pi": math.pi,
    "numpy.pi": math.pi,
    "math.pi": math.pi,
    "np.e": math.e,
    "numpy.e": math.e,
    "math.e": math.e,
}

_BINARY_OPERATORS: dict[type[ast.operator], BinaryOperator] = {
    ast.Add: "+",
    ast.Sub: "-",
    ast.Mult: "*",
    ast.Div: "/",
    ast.Pow: "**",
}

_COMPARISON_OPERATORS: dict[type[ast.cmpop], ComparisonOperator] = {
    ast.Lt: "<",
    ast.LtE: "<=",
    ast.Gt: ">",
    ast.GtE: ">=",
    ast.Eq: "==",
    ast.NotEq: "!=",
}


def _forbidden(node: ast.AST, message: str) -> ForbiddenConstructError:
    line = getattr(node, "lineno", 0)
    return ForbiddenConstructError(f"{message} (line {line})")


def _reads(expr: Expr, names: list[str]) -> bool:
    if isinstance(expr, Var):
        return expr.name in names
    return any(_reads(child, names) for child in children(expr))


def _dotted_name(node: ast.expr) -> str | None:
    """Return "a.b.c" for a chain of attribute accesses on a name"""
    match node:
        case ast.Name(id=name):
            return name
        case ast.Attribute(value=value, attr=attr):
            prefix = _dotted_name(value)
            return None if prefix is None else f"{prefix}.{attr}"
    return None


def _integer_literal(node: ast.expr) -> int | None:
    """Return the value of an integer literal, allowing a leading minus"""
    match node:
        case ast.Constant(value=int() as value) if not isinstance(value, bool):
            return value
        case ast.UnaryOp(op=ast.USub(), operand=ast.Constant(value=int() as value)):
            if not isinstance(value, bool):
                return -value
    return None


@dataclass
class _Scope:
    bound: set[str] = field(default_factory=set)


class _Translator:
    """Translate one function body; tracks the names bound so far"""

    def __init__(
        self, params: tuple[str, ...], names: frozenset[str] = frozenset()
    ) -> None:
        self.scope = _Scope(set(params))
        # Every name in the source, so hidden names never shadow one
        self.taken = set(names) | set(params)

    def expr(self, node: ast.expr, *, in_test: bool = False) -> Expr:
        match node:
            case ast.Constant(value=value):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise _forbidden(node, f"literal {value!r} is not a number")
                if not math.isfinite(value):
                    raise _forbidden(node, "non-finite literal")
                return Num(float(value))

            case ast.Name(id=name):
                if name not in self.scope.bound:
                    raise _forbidden(node, f"unknown name {name!r}")
                return Var(name)

            case ast.Attribute():
                dotted = _dotted_name(node)
                if dotted is None or dotted not in CONSTANT_ALIASES:
                    raise _forbidden(node, f"attribute access {dotted!r}")
                return Num(CONSTANT_ALIASES[dotted])

            case ast.UnaryOp(op=ast.USub(), operand=operand):
                if isinstance(operand, ast.Constant):
                    literal = self.expr(operand)
                    assert isinstance(literal, Num)
                    return Num(-literal.value)
                return Neg(self.expr(operand))

            case ast.UnaryOp(op=ast.UAdd(), operand=operand):
                return self.expr(operand)

            case ast.BinOp(left=left, op=op, right=right):
                binary = _BINARY_OPERATORS.get(type(op))
                if binary is None:
                    raise _forbidden(node, f"operator {type(op).__name__}")
                return BinOp(binary, self.expr(left), self.expr(right))

            case ast.Compare(left=left, ops=ops, comparators=comparators):
                if not in_test:
                    raise _forbidden(node, "comparisons are only allowed as conditions")
                if len(ops) != 1:
                    raise _forbidden(node, "chained comparisons")
                comparison = _COMPARISON_OPERATORS.get(type(ops[0]))
                if comparison is None:
                    raise _forbidden(node, f"comparison {type(ops[0]).__name__}")
                return Compare(
                    comparison, self.expr(left), self.expr(comparators[0])
                )

            case ast.IfExp(test=test, body=body, orelse=orelse):
                condition = self.expr(test, in_test=True)
                if not isinstance(condition, Compare):
                    raise _forbidden(test, "condition must be a comparison")
                return IfExp(condition, self.expr(body), self.expr(orelse))

            case ast.List(elts=elts) | ast.Tuple(elts=elts):
                if not elts:
                    raise _forbidden(node, "empty vector")
                if any(isinstance(elt, ast.Starred) for elt in elts):
                    raise _forbidden(node, "starred expression")
                return VectorLit(tuple(self.expr(elt) for elt in elts))

            case ast.Subscript(value=value, slice=index_node):
                index = _integer_literal(index_node)
                if index is None:
                    raise _forbidden(node, "only constant integer indexing")
                return Index(self.expr(value), index)

            case ast.Call(func=func, args=args, keywords=keywords):
                return self.call(node, func, args, keywords)

        raise _forbidden(node, f"{type(node).__name__} expressions are not allowed")

    def call(
        self,
        node: ast.Call,
        func: ast.expr,
        args: list[ast.expr],
        keywords: list[ast.keyword],
    ) -> Expr:
        dotted = _dotted_name(func)
        if dotted is None:
            raise _forbidden(node, "calls must name a builtin")

        name = CALL_ALIASES.get(dotted, dotted)
        if keywords:
            raise _forbidden(node, f"keyword arguments to {dotted}")
        if any(isinstance(arg, ast.Starred) for arg in args):
            raise _forbidden(node, f"starred arguments to {dotted}")

        if name == "identity":
            if len(args) != 1:
                raise _forbidden(node, f"{dotted} takes one argument")
            return self.expr(args[0])

        if name not in BUILTINS:
            raise _forbidden(node, f"call to non-whitelisted function {dotted!r}")

        if name in ("min", "max"):
            if not args:
                raise _forbidden(node, f"{name} needs at least one argument")
        elif len(args) != 1:
            raise _forbidden(node, f"{name} takes exactly one argument")

        builtin: BuiltinName = name  # type: ignore [assignment]
        return Call(builtin, tuple(self.expr(arg) for arg in args))

    def body(self, statements: list[ast.stmt]) -> Expr:
        bindings: list[Binding] = []

        if (
            statements
            and isinstance(statements[0], ast.Expr)
            and isinstance(statements[0].value, ast.Constant)
            and isinstance(statements[0].value.value, str)
        ):
            # Docstring
            statements = statements[1:]

        for i, statement in enumerate(statements):
            last = i + 1 == len(statements)
            match statement:
                case ast.Return(value=value):
                    if not last:
                        raise _forbidden(statement, "statements after return")
                    if value is None:
                        raise SignatureMismatchError("heuristic must return a value")
                    return let(tuple(bindings), self.expr(value))

                case ast.Assign(targets=[target], value=value):
                    bindings.extend(self.assignment(statement, target, value))

                case ast.AnnAssign(target=target, value=value) if value is not None:
                    bindings.extend(self.assignment(statement, target, value))

                case ast.AugAssign(target=ast.Name(id=name), op=op, value=value):
                    binary = _BINARY_OPERATORS.get(type(op))
                    if binary is None:
                        raise _forbidden(statement, f"operator {type(op).__name__}")
                    if name not in self.scope.bound:
                        raise _forbidden(statement, f"unknown name {name!r}")
                    bindings.append(
                        Binding(name, BinOp(binary, Var(name), self.expr(value)))
                    )

                case ast.Pass():
                    continue

                case _:
                    raise _forbidden(
                        statement,
                        f"{type(statement).__name__} statements are not allowed",
                    )

        raise SignatureMismatchError("heuristic has no return statement")

    def assignment(
        self, statement: ast.stmt, target: ast.expr, value_node: ast.expr
    ) -> list[Binding]:
        value = self.expr(value_node)

        match target:
            case ast.Name(id=name):
                self._check_bindable(statement, name)
                self.scope.bound.add(name)
                return [Binding(name, value)]
            case ast.Tuple(elts=elts) | ast.List(elts=elts):
                names: list[str] = []
                for elt in elts:
                    if not isinstance(elt, ast.Name):
                        raise _forbidden(statement, "can only unpack into names")
                    self._check_bindable(statement, elt.id)
                    names.append(elt.id)
                self.scope.bound.update(names)
                if not _reads(value, names):
                    return [
                        Binding(name, Index(value, k)) for k, name in enumerate(names)
                    ]

                # Unpacking assigns all names at once, so a, b = b, a swaps
                hidden = self.hidden_name()
                unpacked = Var(hidden)
                items = [Binding(n, Index(unpacked, k)) for k, n in enumerate(names)]
                return [Binding(hidden, value), *items]

        raise _forbidden(statement, "can only assign to names")

    def hidden_name(self) -> str:
        index = 0
        while f"_unpacked{index}" in self.taken:
            index += 1
        name = f"_unpacked{index}"
        self.taken.add(name)
        return name

    @staticmethod
    def _check_bindable(statement: ast.stmt, name: str) -> None:
        if name in BUILTINS:
            raise _forbidden(statement, f"cannot rebind builtin {name!r}")


def _function_def(module: ast.Module) -> ast.FunctionDef:
    functions: list[ast.FunctionDef] = []
    for statement in module.body:
        if isinstance(statement, (ast.Import, ast.ImportFrom)):
            raise _forbidden(statement, "imports are not allowed")
        if isinstance(statement, ast.FunctionDef):
            functions.append(statement)
            continue
        raise _forbidden(
            statement, f"top level {type(statement).__name__} is not allowed"
        )

    if len(functions) != 1:
        raise ForbiddenConstructError(
            f"source must define exactly one function, found {len(functions)}"
        )

    return functions[0]


def _parameters(function: ast.FunctionDef) -> tuple[str, ...]:
    arguments = function.args
    if (
        arguments.vararg is not None
        or arguments.kwarg is not None
        or arguments.kwonlyargs
        or arguments.defaults
    ):
        raise _forbidden(function, "only plain positional parameters are allowed")
    if function.decorator_list:
        raise _forbidden(function, "decorators are not allowed")

    return tuple(arg.arg for arg in (*arguments.posonlyargs, *arguments.args))


# Shapes for the static return check: "scalar", a vector length, or "vector"
# when the length is unknown. None means the shape could not be inferred.
_Shape = str | int | None


def _merge_shapes(*shapes: _Shape) -> _Shape:
    if any(shape is None for shape in shapes):
        return None
    vectors = [shape for shape in shapes if shape != "scalar"]
    if not vectors:
        return "scalar"
    lengths = {shape for shape in vectors if isinstance(shape, int)}
    if len(lengths) == 1:
        return lengths.pop()
    return "vector" if not lengths else None


def infer_shape(expr: Expr, env: dict[str, _Shape]) -> _Shape:
    """Best-effort static shape of expr; None when unknown or inconsistent"""
    match expr:
        case Num():
            return "scalar"
        case Var(name):
            return env.get(name)
        case VectorLit(items):
            return len(items)
        case Index():
            return "scalar"
        case BinOp(_, left, right):
            return _merge_shapes(infer_shape(left, env), infer_shape(right, env))
        case Neg(operand):
            return infer_shape(operand, env)
        case Compare():
            return "scalar"
        case IfExp(_, body, orelse):
            body_shape, orelse_shape = infer_shape(body, env), infer_shape(orelse, env)
            return body_shape if body_shape == orelse_shape else None
        case Call(func, args):
            arg_shapes = [infer_shape(arg, env) for arg in args]
            if func in REDUCTIONS:
                return "scalar"
            if func in ("min", "max"):
                if len(args) == 1:
                    return "scalar"
                return _merge_shapes(*arg_shapes)
            if func == "sorted" or func in ELEMENTWISE_BUILTINS:
                return arg_shapes[0]
            return None
        case Let(bindings, body):
            scoped = dict(env)
            for binding in bindings:
                scoped[binding.name] = infer_shape(binding.value, scoped)
            return infer_shape(body, scoped)
    return None


def _check_signature(function: Function, signature: HeuristicSignature) -> None:
    if len(function.params) != signature.arity:
        raise SignatureMismatchError(
            f"expected {signature.arity} parameter(s), found {len(function.params)}"
        )

    input_shape: _Shape
    if signature.vector_input:
        input_shape = (
            signature.input_length if signature.input_length is not None else "vector"
        )
    else:
        input_shape = "scalar"

    shape = infer_shape(function.body, {name: input_shape for name in function.params})
    if shape is None:
        return

    expected_length = signature.output_length
    if signature.kind is SignatureKind.JOINT_ALLOCATION:
        if shape == "scalar":
            raise SignatureMismatchError("heuristic must return a vector")
        if (
            expected_length is not None
            and isinstance(shape, int)
            and shape != expected_length
        ):
            raise SignatureMismatchError(
                f"heuristic must return a vector of length {expected_length}, "
                f"found {shape}"
            )
    elif shape != "scalar":
        raise SignatureMismatchError("heuristic must return a scalar")


def parse(source: str, signature: HeuristicSignature) -> HeuristicProgram:
    """Parse the source text of a single-function heuristic"""
    text = textwrap.dedent(source).strip()

    try:
        module = ast.parse(text)
    except SyntaxError as e:
        raise DslSyntaxError(
            e.msg, line=e.lineno or 0, column=e.offset or 0
        ) from e

    function_def = _function_def(module)
    params = _parameters(function_def)
    names = frozenset(
        node.id for node in ast.walk(function_def) if isinstance(node, ast.Name)
    )
    body = _Translator(params, names).body(function_def.body)

    function = Function(params, body)
    _check_signature(function, signature)

    return HeuristicProgram(source=source, ast=function, signature=signature)
