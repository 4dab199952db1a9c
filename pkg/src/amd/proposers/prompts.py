"""
Prompts for language model proposers

The templates are package data under amd/prompts, filled in with
string.Template. The system prompt describes the setting and the language a
heuristic must be written in; the user prompt lists the parents and the
strategy for the iteration.
"""

from enum import Enum, unique
from functools import cache
from importlib import resources
from string import Template

from amd.distributions import (
    Beta,
    Distribution,
    GridJointDistribution,
    PiecewiseUniform,
    Uniform,
)
from amd.mechanisms.settings import (
    Distillation,
    InnerSetting,
    RediscoveryPerBidder,
    SettingSpec,
    SingleItemRevenue,
    VcgRedistribution,
)
from amd.proposers.base import Parent, ProposalRequest

TEMPLATE_PACKAGE = "amd.prompts"

DSL_RULES_TEMPLATE = "dsl_rules.txt"
DISTILLATION_TEMPLATE = "distillation.txt"
EXTRA_HINTS_TEMPLATE = "extra_hints.txt"


class MissingTemplateError(ValueError):
    """Exception raised when a prompt template can't be read or filled in"""


@unique
class StrategyPreset(str, Enum):
    DEFAULT = "default"
    REDISCOVERY = "rediscovery"
    NONE = "none"


@cache
def read_template(name: str) -> str:
    try:
        return resources.files(TEMPLATE_PACKAGE).joinpath(name).read_text()
    except OSError as e:
        raise MissingTemplateError(f"Could not read prompt template {name!r}") from e


def _fill(name: str, substitutions: dict[str, str]) -> str:
    try:
        return Template(read_template(name)).substitute(substitutions).strip()
    except (KeyError, ValueError) as e:
        raise MissingTemplateError(f"Could not fill in template {name!r}: {e}") from e


def load_strategies(preset: StrategyPreset) -> tuple[str, ...]:
    """The strategy texts of the preset, one per non-empty line of its file"""
    if preset is StrategyPreset.NONE:
        return ()
    text = read_template(f"strategies/{preset.value}.txt")
    return tuple(line.strip() for line in text.splitlines() if line.strip())


def describe_distribution(distribution: Distribution) -> str:
    match distribution:
        case Uniform(lo, hi):
            return f"the uniform distribution U[{lo:g}, {hi:g}]"
        case Beta(alpha, beta):
            return f"the Beta({alpha:g}, {beta:g}) distribution"
        case PiecewiseUniform():
            return "a piecewise uniform distribution"
        case GridJointDistribution(size=size):
            return f"a correlated {size}x{size} grid distribution"


def _template_name(setting: InnerSetting) -> str:
    match setting:
        case RediscoveryPerBidder():
            return "rediscovery.txt"
        case VcgRedistribution():
            return "redistribution.txt"
        case SingleItemRevenue():
            return "correlated.txt"


def substitutions(setting: InnerSetting) -> dict[str, str]:
    """Template placeholders and their values for the setting"""
    n_items = setting.n_items if isinstance(setting, VcgRedistribution) else 1
    return {
        "n_bidders": str(setting.n_bidders),
        "n_items": str(n_items),
        "others_length": str(setting.n_bidders - 1),
        "n_outputs": str(setting.n_bidders + 1),
        "distribution": describe_distribution(setting.distribution),
    }


def system_prompt(setting: SettingSpec, extra_hints: bool = False) -> str:
    inner = setting.inner if isinstance(setting, Distillation) else setting
    values = substitutions(inner)

    names = [_template_name(inner)]
    if isinstance(setting, Distillation):
        names.append(DISTILLATION_TEMPLATE)
    if extra_hints and isinstance(inner, RediscoveryPerBidder):
        names.append(EXTRA_HINTS_TEMPLATE)
    names.append(DSL_RULES_TEMPLATE)

    return "\n\n".join(_fill(name, values) for name in names)


def versioned_source(parent: Parent, version: int) -> str:
    """The parent's canonical source with the function named heuristic_v{version}"""
    return parent.source.replace("def heuristic(", f"def heuristic_v{version}(", 1)


def user_prompt(request: ProposalRequest) -> str:
    listings = [
        f"# Score: {parent.score:.4f}\n{versioned_source(parent, i)}"
        for i, parent in enumerate(request.parents)
    ]
    parts = [
        "Here are previous heuristics, ordered from worst to best:",
        *listings,
    ]
    if request.strategy is not None:
        parts.append(request.strategy)
    parts.append(
        f"Only output a standalone heuristic_v{request.version} function code, "
        "do not output anything else."
    )
    return "\n\n".join(parts)


def render_prompts(
    request: ProposalRequest, extra_hints: bool = False
) -> tuple[str, str]:
    """Return the system and user prompt for the request"""
    return system_prompt(request.setting, extra_hints), user_prompt(request)
