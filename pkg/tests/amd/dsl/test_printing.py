import itertools
from collections.abc import Iterator

import numpy as np
import pytest

from amd.dsl import DslError
from amd.dsl.expr import (
    BinOp,
    Call,
    Function,
    HeuristicProgram,
    HeuristicSignature,
    Num,
    Var,
    joint_allocation_signature,
    per_bidder_signature,
    redistribution_signature,
)
from amd.dsl.parsing import parse
from amd.dsl.printing import (
    format_function,
    format_number,
    pretty_print,
    structural_size,
)
from amd.mechanisms.settings import (
    RediscoveryPerBidder,
    SettingSpec,
    SingleItemRevenue,
    VcgRedistribution,
)
from amd.proposers.symbolic import apply_operator, grammar_for, random_expression

PER_BIDDER = per_bidder_signature()
JOINT_2 = joint_allocation_signature(2)
REDISTRIBUTION_4 = redistribution_signature(4)

SIGMOID_SOURCE = """
def heuristic(bids):
    threshold = 0.5
    alloc_bidder1 = sigmoid(10 * (bids[0] - threshold))
    alloc_bidder2 = sigmoid(10 * (bids[1] - threshold))
    no_alloc = 1 - max(alloc_bidder1, alloc_bidder2)
    return [alloc_bidder1, alloc_bidder2, no_alloc]
"""

SIGMOID_CANONICAL = """def heuristic(bids):
  threshold = 0.5
  alloc_bidder1 = sigmoid(10 * (bids[0] - threshold))
  alloc_bidder2 = sigmoid(10 * (bids[1] - threshold))
  no_alloc = 1 - max(alloc_bidder1, alloc_bidder2)
  return [alloc_bidder1, alloc_bidder2, no_alloc]"""


def test_pretty_print_constructed() -> None:
    program = HeuristicProgram(
        source="",
        ast=Function(
            ("others_bids",),
            BinOp("*", Num(0.5), Call("min", (Var("others_bids"),))),
        ),
        signature=REDISTRIBUTION_4,
    )
    assert (
        pretty_print(program)
        == "def heuristic(others_bids): return 0.5 * min(others_bids)"
    )


canonical_cases: tuple[tuple[str, HeuristicSignature, str], ...] = (
    ("def heuristic(v): return v", PER_BIDDER, "def heuristic(v): return v"),
    (
        "def heuristic(v):\n    return (v - 1) * 2.0",
        PER_BIDDER,
        "def heuristic(v): return (v - 1) * 2",
    ),
    (
        "def heuristic(v):\n    pass\n    return v",
        PER_BIDDER,
        "def heuristic(v): return v",
    ),
    (
        "def heuristic(v): return -(v ** 2)",
        PER_BIDDER,
        "def heuristic(v): return -v ** 2",
    ),
    (
        "def heuristic(v): return (-v) ** 2",
        PER_BIDDER,
        "def heuristic(v): return (-v) ** 2",
    ),
    (
        "def heuristic(v): return 2 ** (-v)",
        PER_BIDDER,
        "def heuristic(v): return 2 ** -v",
    ),
    (
        "def heuristic(v): return (v ** 2) ** 3",
        PER_BIDDER,
        "def heuristic(v): return (v ** 2) ** 3",
    ),
    (
        "def heuristic(v): return v - (v - 1)",
        PER_BIDDER,
        "def heuristic(v): return v - (v - 1)",
    ),
    (
        "def heuristic(v): return (v - v) - 1",
        PER_BIDDER,
        "def heuristic(v): return v - v - 1",
    ),
    (
        "def heuristic(v): return v / (v * 2)",
        PER_BIDDER,
        "def heuristic(v): return v / (v * 2)",
    ),
    (
        "def heuristic(v): return v - -0.5",
        PER_BIDDER,
        "def heuristic(v): return v - -0.5",
    ),
    (
        "def heuristic(v): return (0.5 if v >= 0.5 else -1)",
        PER_BIDDER,
        "def heuristic(v): return 0.5 if v >= 0.5 else -1",
    ),
    (
        "def heuristic(v): return (1 if v > 0 else 2) + 1",
        PER_BIDDER,
        "def heuristic(v): return (1 if v > 0 else 2) + 1",
    ),
    (
        "def heuristic(others_bids): return np.sort(others_bids)[0] * 0.5",
        REDISTRIBUTION_4,
        "def heuristic(others_bids): return sorted(others_bids)[0] * 0.5",
    ),
    (SIGMOID_SOURCE, JOINT_2, SIGMOID_CANONICAL),
)


@pytest.mark.parametrize("source, signature, canonical", canonical_cases)
def test_pretty_print(
    source: str, signature: HeuristicSignature, canonical: str
) -> None:
    assert pretty_print(parse(source, signature)) == canonical


roundtrip_cases: tuple[tuple[str, HeuristicSignature], ...] = (
    *((source, signature) for source, signature, _ in canonical_cases),
    ("def heuristic(v): return v - (1 - cdf(v)) / pdf(v)", PER_BIDDER),
    ("def heuristic(v): return --v", PER_BIDDER),
    ("def heuristic(v): return -(-0.5)", PER_BIDDER),
    ("def heuristic(v): return 1e-05 * v + 1e20", PER_BIDDER),
    ("def heuristic(v): return v ** -2 if v != 0 else 0", PER_BIDDER),
    (
        "def heuristic(v): return 1 if v < 0.5 else (2 if v < 0.7 else 3)",
        PER_BIDDER,
    ),
    (
        "def heuristic(v): return (1 if v < 0.5 else 2) if v > 0 else 3",
        PER_BIDDER,
    ),
    ("def heuristic(v): return -sigmoid(v) ** 0.5", PER_BIDDER),
    ("def heuristic(bids): return [-bids[0], bids[1] ** 2, 0]", JOINT_2),
    ("def heuristic(bids): return [bids[-1], max(bids[0], 0.2), -1]", JOINT_2),
    (
        "def heuristic(others_bids):\n"
        "    lo, mid, hi = sorted(others_bids)\n"
        "    return (lo + mid) / len(others_bids) - median(others_bids) * 0",
        REDISTRIBUTION_4,
    ),
)


@pytest.mark.parametrize("source, signature", roundtrip_cases)
def test_pretty_print_roundtrip(source: str, signature: HeuristicSignature) -> None:
    program = parse(source, signature)
    reparsed = parse(pretty_print(program), signature)
    assert reparsed.ast == program.ast


@pytest.mark.parametrize(
    "value, text",
    (
        (1.0, "1"),
        (-3.0, "-3"),
        (0.5, "0.5"),
        (1e-05, "1e-05"),
        (1e20, "1e+20"),
    ),
)
def test_format_number(value: float, text: str) -> None:
    assert format_number(value) == text


@pytest.mark.parametrize(
    "source, size",
    (
        ("def heuristic(v): return v", 2),
        ("def heuristic(v): return v - cdf(v)", 5),
        ("def heuristic(x): return x - cdf(x)", 5),
        ("def heuristic(v): return -v", 3),
        ("def heuristic(v): return 1 if v > 0 else 0", 7),
        ("def heuristic(v):\n    x = v\n    return x", 5),
    ),
)
def test_structural_size(source: str, size: int) -> None:
    assert structural_size(parse(source, PER_BIDDER)) == size


corpus_settings: tuple[SettingSpec, ...] = (
    RediscoveryPerBidder(),
    VcgRedistribution(n_bidders=4, n_items=2),
    SingleItemRevenue(n_bidders=2),
    SingleItemRevenue(n_bidders=3),
)


def random_corpus(size: int) -> Iterator[HeuristicProgram]:
    """Random programs of every setting, some with jittered constants"""
    produced = 0
    for seed in itertools.count():
        setting = corpus_settings[seed % len(corpus_settings)]
        grammar = grammar_for(setting)
        rng = np.random.default_rng(seed)
        expr = random_expression(grammar, rng)
        if seed % 2:
            expr = apply_operator(4, [expr], grammar, rng)
        source = format_function(Function((grammar.parameter,), expr))
        try:
            program = parse(source, grammar.signature)
        except DslError:
            continue
        yield program
        produced += 1
        if produced == size:
            return


def test_pretty_print_roundtrip_random_corpus() -> None:
    programs = list(random_corpus(1000))
    assert len(programs) == 1000

    for program in programs:
        text = pretty_print(program)
        reparsed = parse(text, program.signature)
        assert reparsed.ast == program.ast, text
        assert pretty_print(reparsed) == text
