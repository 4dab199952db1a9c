from amd.dsl.expr import (
    BinOp,
    Call,
    Compare,
    Expr,
    Function,
    HeuristicProgram,
    IfExp,
    Index,
    Let,
    Neg,
    Num,
    Var,
    VectorLit,
    children,
)

INDENT = "  "

# Binding strength of each printed form, loosest first
_CONDITIONAL = 0
_COMPARISON = 1
_ADDITIVE = 2
_MULTIPLICATIVE = 3
_UNARY = 4
_POWER = 5
_ATOM = 7

_BINARY_PRECEDENCE = {
    "+": _ADDITIVE,
    "-": _ADDITIVE,
    "*": _MULTIPLICATIVE,
    "/": _MULTIPLICATIVE,
    "**": _POWER,
}


def format_number(value: float) -> str:
    """Shortest text that parses back to value"""
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def _precedence(expr: Expr) -> int:
    match expr:
        case Num(value):
            return _UNARY if value < 0 else _ATOM
        case Neg():
            return _UNARY
        case BinOp(op, _, _):
            return _BINARY_PRECEDENCE[op]
        case Compare():
            return _COMPARISON
        case IfExp():
            return _CONDITIONAL
    return _ATOM


def _wrap(expr: Expr, minimum: int) -> str:
    """Format expr, parenthesized unless it binds at least as tight as minimum"""
    text = format_expr(expr)
    return text if _precedence(expr) >= minimum else f"({text})"


def format_expr(expr: Expr) -> str:
    """Format a single expression as source text"""
    match expr:
        case Num(value):
            return format_number(value)
        case Var(name):
            return name
        case VectorLit(items):
            return "[" + ", ".join(format_expr(item) for item in items) + "]"
        case Index(target, index):
            return f"{_wrap(target, _ATOM)}[{index}]"
        case BinOp("**", left, right):
            # Right associative, and the exponent may carry a unary minus
            return f"{_wrap(left, _ATOM)} ** {_wrap(right, _UNARY)}"
        case BinOp(op, left, right):
            precedence = _BINARY_PRECEDENCE[op]
            return f"{_wrap(left, precedence)} {op} {_wrap(right, precedence + 1)}"
        case Neg(operand):
            return f"-{_wrap(operand, _UNARY)}"
        case Compare(op, left, right):
            return f"{_wrap(left, _ADDITIVE)} {op} {_wrap(right, _ADDITIVE)}"
        case IfExp(test, body, orelse):
            return (
                f"{_wrap(body, _COMPARISON)} if {format_expr(test)} "
                f"else {_wrap(orelse, _CONDITIONAL)}"
            )
        case Call(func, args):
            return f"{func}(" + ", ".join(format_expr(arg) for arg in args) + ")"
        case Let():
            raise ValueError("let blocks can only appear as a function body")


def format_function(function: Function) -> str:
    """Canonical source text of a function"""
    header = f"def heuristic({', '.join(function.params)}):"
    body = function.body

    if not isinstance(body, Let) or not body.bindings:
        result = body.body if isinstance(body, Let) else body
        return f"{header} return {format_expr(result)}"

    lines = [header]
    for binding in body.bindings:
        lines.append(f"{INDENT}{binding.name} = {format_expr(binding.value)}")
    lines.append(f"{INDENT}return {format_expr(body.body)}")
    return "\n".join(lines)


def pretty_print(program: HeuristicProgram) -> str:
    return format_function(program.ast)


def expression_size(expr: Expr) -> int:
    """Node count of an expression; each let binding counts as one node"""
    if isinstance(expr, Let):
        return (
            1
            + sum(1 + expression_size(binding.value) for binding in expr.bindings)
            + expression_size(expr.body)
        )
    return 1 + sum(expression_size(child) for child in children(expr))


def structural_size(program: HeuristicProgram) -> int:
    """Node count of the program, counting the function wrapper"""
    return 1 + expression_size(program.ast.body)
