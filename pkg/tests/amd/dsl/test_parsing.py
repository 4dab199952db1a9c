import math

import pytest

from amd.dsl.errors import (
    DslSyntaxError,
    ForbiddenConstructError,
    SignatureMismatchError,
)
from amd.dsl.expr import (
    BinOp,
    Binding,
    Call,
    Compare,
    Expr,
    HeuristicSignature,
    IfExp,
    Index,
    Let,
    Neg,
    Num,
    Var,
    VectorLit,
    joint_allocation_signature,
    per_bidder_signature,
    redistribution_signature,
)
from amd.dsl.parsing import parse

V = Var("v")
BIDS = Var("bids")
OTHERS = Var("others_bids")

PER_BIDDER = per_bidder_signature()
JOINT_2 = joint_allocation_signature(2)
REDISTRIBUTION_4 = redistribution_signature(4)


parse_cases: tuple[tuple[str, HeuristicSignature, Expr], ...] = (
    ("def heuristic(v): return v", PER_BIDDER, V),
    (
        "def heuristic(v): return v - (1 - cdf(v)) / pdf(v)",
        PER_BIDDER,
        BinOp(
            "-",
            V,
            BinOp("/", BinOp("-", Num(1), Call("cdf", (V,))), Call("pdf", (V,))),
        ),
    ),
    ("def heuristic(v): return -2", PER_BIDDER, Num(-2)),
    ("def heuristic(v): return -v", PER_BIDDER, Neg(V)),
    ("def heuristic(v): return +v", PER_BIDDER, V),
    ("def heuristic(v): return math.pi * v", PER_BIDDER, BinOp("*", Num(math.pi), V)),
    ("def heuristic(v): return expit(v)", PER_BIDDER, Call("sigmoid", (V,))),
    ("def heuristic(v): return float(v)", PER_BIDDER, V),
    (
        "def heuristic(v): return 1 if v >= 0.5 else 0",
        PER_BIDDER,
        IfExp(Compare(">=", V, Num(0.5)), Num(1), Num(0)),
    ),
    (
        "def heuristic(others_bids): return 0.5 * np.min(others_bids)",
        REDISTRIBUTION_4,
        BinOp("*", Num(0.5), Call("min", (OTHERS,))),
    ),
    (
        "def heuristic(others_bids): return np.mean(others_bids)",
        REDISTRIBUTION_4,
        Call("mean", (OTHERS,)),
    ),
    (
        "def heuristic(others_bids): return sorted(others_bids)[-1]",
        REDISTRIBUTION_4,
        Index(Call("sorted", (OTHERS,)), -1),
    ),
    (
        "def heuristic(bids): return np.array([bids[0], bids[1], 0])",
        JOINT_2,
        VectorLit((Index(BIDS, 0), Index(BIDS, 1), Num(0))),
    ),
    (
        "def heuristic(bids): return np.maximum(bids, 0.1)[0] * [1, 1, 1]",
        JOINT_2,
        BinOp(
            "*",
            Index(Call("max", (BIDS, Num(0.1))), 0),
            VectorLit((Num(1), Num(1), Num(1))),
        ),
    ),
)


@pytest.mark.parametrize("source, signature, body", parse_cases)
def test_parse(source: str, signature: HeuristicSignature, body: Expr) -> None:
    program = parse(source, signature)
    assert program.ast.body == body
    assert program.source == source
    assert program.signature == signature


def test_parse_statements() -> None:
    source = '''
        def heuristic(v):
            """Halve the value"""
            x = v
            x /= 2
            y: float = x
            pass
            return y
    '''
    program = parse(source, PER_BIDDER)
    assert program.ast.params == ("v",)
    assert program.ast.body == Let(
        (
            Binding("x", V),
            Binding("x", BinOp("/", Var("x"), Num(2))),
            Binding("y", Var("x")),
        ),
        Var("y"),
    )


def test_parse_tuple_unpacking() -> None:
    source = """
def heuristic(bids):
    a, b = bids
    return [a, b, 0]
"""
    program = parse(source, JOINT_2)
    assert program.ast.body == Let(
        (Binding("a", Index(BIDS, 0)), Binding("b", Index(BIDS, 1))),
        VectorLit((Var("a"), Var("b"), Num(0))),
    )


def test_parse_swap_binds_the_value_first() -> None:
    source = """
def heuristic(v):
    a = v
    b = 0
    a, b = b, a
    return b
"""
    program = parse(source, PER_BIDDER)
    body = program.ast.body
    assert isinstance(body, Let)
    hidden = Var("_unpacked0")
    assert body.bindings[2:] == (
        Binding("_unpacked0", VectorLit((Var("b"), Var("a")))),
        Binding("a", Index(hidden, 0)),
        Binding("b", Index(hidden, 1)),
    )


def test_parse_sigmoid_heuristic() -> None:
    source = """
def heuristic(bids):
  threshold = 0.5
  alloc_bidder1 = sigmoid(10 * (bids[0] - threshold))
  alloc_bidder2 = sigmoid(10 * (bids[1] - threshold))
  no_alloc = 1 - max(alloc_bidder1, alloc_bidder2)
  return [alloc_bidder1, alloc_bidder2, no_alloc]
"""
    program = parse(source, JOINT_2)
    assert isinstance(program.ast.body, Let)
    assert [binding.name for binding in program.ast.body.bindings] == [
        "threshold",
        "alloc_bidder1",
        "alloc_bidder2",
        "no_alloc",
    ]


@pytest.mark.parametrize(
    "source, line",
    (
        ("def heuristic(v): return v +", 1),
        ("def heuristic(v):\n    x = (v\n    return x", 2),
        ("def heuristic(v) return v", 1),
    ),
)
def test_parse_syntax_error(source: str, line: int) -> None:
    with pytest.raises(DslSyntaxError) as exc_info:
        parse(source, PER_BIDDER)

    assert exc_info.value.line == line


forbidden_sources: tuple[str, ...] = (
    "import numpy as np\ndef heuristic(v): return v",
    "from math import exp\ndef heuristic(v): return exp(v)",
    "def heuristic(v):\n    for i in [1, 2]:\n        v = v + i\n    return v",
    "def heuristic(v):\n    while v < 1:\n        v = v * 2\n    return v",
    "def heuristic(v): return open('/etc/passwd')",
    "def heuristic(v): return np.random.rand()",
    "def heuristic(v): return (lambda x: x)(v)",
    "def heuristic(v): return heuristic(v)",
    "def heuristic(v): return v < 1",
    "def heuristic(v): return 1 if 0 < v < 1 else 0",
    "def heuristic(v): return 1 if v else 0",
    "def heuristic(v): return 'abc'",
    "def heuristic(v): return True",
    "def heuristic(v): return max(v, key=abs)",
    "def heuristic(v): return abs(v, v)",
    "def heuristic(v): return min()",
    "def heuristic(v): return w",
    "def heuristic(v): return v.real",
    "def heuristic(v): return v // 2",
    "def heuristic(v): return [v][0:1][0]",
    "def heuristic(v): return [][0]",
    "def heuristic(v):\n    sum = v\n    return sum",
    "def heuristic(v):\n    return v\n    x = 1",
    "def heuristic(v):\n    global x\n    return v",
    "def f(v): return v\ndef g(v): return v",
    "x = 1\ndef heuristic(v): return v",
    "@cache\ndef heuristic(v): return v",
    "def heuristic(v=1): return v",
    "def heuristic(*v): return v",
    "print(1)",
)


@pytest.mark.parametrize("source", forbidden_sources)
def test_parse_forbidden(source: str) -> None:
    with pytest.raises(ForbiddenConstructError):
        parse(source, PER_BIDDER)


@pytest.mark.parametrize(
    "source, signature",
    (
        ("def heuristic(v, w): return v", PER_BIDDER),
        ("def heuristic(): return 1", PER_BIDDER),
        ("def heuristic(v): return [v, v]", PER_BIDDER),
        ("def heuristic(v):\n    x = v", PER_BIDDER),
        ("def heuristic(v):\n    return", PER_BIDDER),
        ("def heuristic(bids): return bids[0]", JOINT_2),
        ("def heuristic(bids): return [bids[0], bids[1]]", JOINT_2),
        ("def heuristic(bids): return sum(bids)", JOINT_2),
        ("def heuristic(others_bids): return sorted(others_bids)", REDISTRIBUTION_4),
        ("def heuristic(others_bids): return others_bids", REDISTRIBUTION_4),
    ),
)
def test_parse_signature_mismatch(source: str, signature: HeuristicSignature) -> None:
    with pytest.raises(SignatureMismatchError):
        parse(source, signature)


def test_parse_unknown_shape_is_accepted() -> None:
    """Return shapes that can't be inferred statically are checked at runtime"""
    source = "def heuristic(bids): return bids + [1, 2, 3] if bids[0] > 0 else 0"
    parse(source, JOINT_2)
