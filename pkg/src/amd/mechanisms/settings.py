"""
Auction settings a heuristic is designed for

Each setting fixes the bidders, their value distribution and the fixing
process, and with it the signature a candidate heuristic must have.
"""

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import TypeAlias

from amd.distributions import (
    Distribution,
    GridJointDistribution,
    InvalidDistributionError,
    MarginalDistribution,
    Uniform,
    distribution_from_dict,
    distribution_to_dict,
)
from amd.dsl.expr import (
    HeuristicSignature,
    joint_allocation_signature,
    per_bidder_signature,
    redistribution_signature,
)
from amd.mechanisms.goal import (
    GoalFunction,
    GoalFunctionError,
    Metric,
    default_goal_function,
    load_goal_function,
)
from amd.mechanisms.vcg import ReverseFix

logger = logging.getLogger(__name__)

# Price granularity of the single item critical price scan
DEFAULT_EPSILON = 0.001

# Replacement bids probed per bidder by the corrected fix
DEFAULT_FIX_GRID_RESOLUTION = 101

# Replacement bids probed per bidder by the reverse waterfilling fix
DEFAULT_REVERSE_GRID_RESOLUTION = 21


class SettingError(ValueError):
    """Exception raised when a setting is inconsistent"""


def _check_epsilon(epsilon: float) -> None:
    if not 0 < epsilon <= 1:
        raise SettingError(f"epsilon must lie in (0, 1], got {epsilon}")


@dataclass(frozen=True, slots=True)
class SingleItemRevenue:
    """One item, joint allocation heuristics, revenue objective"""

    n_bidders: int = 2
    distribution: Distribution = field(default_factory=Uniform)
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if self.n_bidders < 1:
            raise SettingError(f"Need at least one bidder, got {self.n_bidders}")
        if isinstance(self.distribution, GridJointDistribution) and self.n_bidders != 2:
            raise SettingError("Grid distributions describe exactly 2 bidders")
        _check_epsilon(self.epsilon)

    @property
    def marginal(self) -> MarginalDistribution | None:
        """The per-bidder distribution visible to heuristics, if values are iid"""
        if isinstance(self.distribution, GridJointDistribution):
            return None
        return self.distribution


@dataclass(frozen=True, slots=True)
class RediscoveryPerBidder:
    """One item, the same score function applied to every bidder"""

    n_bidders: int = 2
    marginal: MarginalDistribution = field(default_factory=Uniform)
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if self.n_bidders < 1:
            raise SettingError(f"Need at least one bidder, got {self.n_bidders}")
        if isinstance(self.marginal, GridJointDistribution):
            raise SettingError("Per-bidder settings need a marginal distribution")
        _check_epsilon(self.epsilon)

    @property
    def distribution(self) -> MarginalDistribution:
        return self.marginal


@dataclass(frozen=True, slots=True)
class VcgRedistribution:
    """Unit demand VCG with the payments partly handed back to the bidders"""

    n_bidders: int = 4
    n_items: int = 2
    marginal: MarginalDistribution = field(default_factory=Uniform)
    fix_grid_resolution: int = DEFAULT_FIX_GRID_RESOLUTION
    reverse_fix: ReverseFix = ReverseFix.OFF
    reverse_grid_resolution: int = DEFAULT_REVERSE_GRID_RESOLUTION

    def __post_init__(self) -> None:
        if not 0 < self.n_items < self.n_bidders:
            raise SettingError(
                f"Need 0 < n_items < n_bidders, got {self.n_items} items "
                f"for {self.n_bidders} bidders"
            )
        if isinstance(self.marginal, GridJointDistribution):
            raise SettingError("Redistribution settings need a marginal distribution")
        if self.fix_grid_resolution < 2:
            raise SettingError("fix_grid_resolution must be at least 2")
        if self.reverse_grid_resolution < 2:
            raise SettingError("reverse_grid_resolution must be at least 2")

    @property
    def distribution(self) -> MarginalDistribution:
        return self.marginal


InnerSetting: TypeAlias = SingleItemRevenue | RediscoveryPerBidder | VcgRedistribution


@dataclass(frozen=True, slots=True)
class Distillation:
    """
    Match a reference function instead of optimizing an auction objective

    The heuristic is scored by its distance to the goal on inputs drawn from
    the inner setting. goal_path None means the shipped goal table.
    """

    inner: InnerSetting = field(default_factory=VcgRedistribution)
    goal: GoalFunction = field(default_factory=default_goal_function)
    metric: Metric = Metric.L2
    sample_on_grid: bool = False
    goal_path: str | None = None

    def __post_init__(self) -> None:
        signature = setting_signature(self.inner)
        expected_inputs = signature.input_length or 1
        if self.goal.input_dimension != expected_inputs:
            raise SettingError(
                f"Goal takes {self.goal.input_dimension} input(s), "
                f"heuristic takes {expected_inputs}"
            )
        if self.goal.output_length != signature.output_length:
            raise SettingError(
                f"Goal output length {self.goal.output_length} doesn't match "
                f"heuristic output length {signature.output_length}"
            )
        if self.goal.metric_hint not in (None, self.metric):
            logger.warning(
                f"Goal function suggests {self.goal.metric_hint.value}, "
                f"using {self.metric.value}"
            )


SettingSpec: TypeAlias = InnerSetting | Distillation


def setting_signature(setting: SettingSpec) -> HeuristicSignature:
    match setting:
        case SingleItemRevenue(n_bidders=n_bidders):
            return joint_allocation_signature(n_bidders)
        case RediscoveryPerBidder():
            return per_bidder_signature()
        case VcgRedistribution(n_bidders=n_bidders):
            return redistribution_signature(n_bidders)
        case Distillation(inner=inner):
            return setting_signature(inner)


def setting_kind(setting: SettingSpec) -> str:
    match setting:
        case SingleItemRevenue():
            return "single_item_revenue"
        case RediscoveryPerBidder():
            return "rediscovery_per_bidder"
        case VcgRedistribution():
            return "vcg_redistribution"
        case Distillation():
            return "distillation"


def setting_to_dict(setting: SettingSpec) -> dict[str, object]:
    kind = setting_kind(setting)
    match setting:
        case SingleItemRevenue():
            return {
                "kind": kind,
                "n_bidders": setting.n_bidders,
                "distribution": distribution_to_dict(setting.distribution),
                "epsilon": setting.epsilon,
            }
        case RediscoveryPerBidder():
            return {
                "kind": kind,
                "n_bidders": setting.n_bidders,
                "distribution": distribution_to_dict(setting.marginal),
                "epsilon": setting.epsilon,
            }
        case VcgRedistribution():
            return {
                "kind": kind,
                "n_bidders": setting.n_bidders,
                "n_items": setting.n_items,
                "distribution": distribution_to_dict(setting.marginal),
                "fix_grid_resolution": setting.fix_grid_resolution,
                "reverse_fix": setting.reverse_fix.value,
                "reverse_grid_resolution": setting.reverse_grid_resolution,
            }
        case Distillation():
            result: dict[str, object] = {
                "kind": kind,
                "inner": setting_to_dict(setting.inner),
                "metric": setting.metric.value,
                "sample_on_grid": setting.sample_on_grid,
            }
            if setting.goal_path is not None:
                result["goal_path"] = setting.goal_path
            return result


_KEYS = {
    "single_item_revenue": {"n_bidders", "distribution", "epsilon"},
    "rediscovery_per_bidder": {"n_bidders", "distribution", "epsilon"},
    "vcg_redistribution": {
        "n_bidders",
        "n_items",
        "distribution",
        "fix_grid_resolution",
        "reverse_fix",
        "reverse_grid_resolution",
    },
    "distillation": {"inner", "goal_path", "metric", "sample_on_grid"},
}


def _int(source: Mapping[str, object], key: str, default: int) -> int:
    value = source.get(key, default)
    # bool is an int, but a count given as true is a mistake
    if not isinstance(value, int) or isinstance(value, bool):
        raise SettingError(f"Setting key {key!r} must be an integer")
    return value


def _float(source: Mapping[str, object], key: str, default: float) -> float:
    value = source.get(key, default)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise SettingError(f"Setting key {key!r} must be a number")
    return float(value)


def _bool(source: Mapping[str, object], key: str, default: bool) -> bool:
    value = source.get(key, default)
    if not isinstance(value, bool):
        raise SettingError(f"Setting key {key!r} must be a boolean")
    return value


def _marginal(source: Mapping[str, object]) -> MarginalDistribution:
    distribution = _distribution(source)
    if isinstance(distribution, GridJointDistribution):
        raise SettingError(f"{source['kind']} needs a marginal distribution")
    return distribution


def _distribution(source: Mapping[str, object]) -> Distribution:
    raw = source.get("distribution", {"kind": "uniform"})
    if not isinstance(raw, Mapping):
        raise SettingError("Setting key 'distribution' must be a mapping")
    try:
        return distribution_from_dict(raw)
    except (InvalidDistributionError, OSError) as e:
        raise SettingError(f"Invalid distribution: {e}") from e


def _reverse_fix(source: Mapping[str, object]) -> ReverseFix:
    value = source.get("reverse_fix", ReverseFix.OFF.value)
    try:
        return ReverseFix(value)
    except ValueError as e:
        choices = ", ".join(member.value for member in ReverseFix)
        raise SettingError(f"reverse_fix {value!r} is not one of {choices}") from e


def _metric(source: Mapping[str, object]) -> Metric:
    value = source.get("metric", Metric.L2.value)
    try:
        return Metric(value)
    except ValueError as e:
        choices = ", ".join(member.value for member in Metric)
        raise SettingError(f"metric {value!r} is not one of {choices}") from e


def _goal(source: Mapping[str, object], base_dir: Path | None) -> GoalFunction:
    goal_path = source.get("goal_path")
    if goal_path is None:
        return default_goal_function()
    if not isinstance(goal_path, str):
        raise SettingError("Setting key 'goal_path' must be a string")

    path = Path(goal_path)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    try:
        return load_goal_function(path)
    except (OSError, GoalFunctionError) as e:
        raise SettingError(f"Could not load goal function {goal_path}: {e}") from e


def setting_from_dict(
    source: Mapping[str, object], base_dir: Path | None = None
) -> SettingSpec:
    """
    Build a setting from its dict form

    Missing keys take their defaults. Relative goal paths are resolved
    against base_dir.
    """
    kind = source.get("kind")
    if not isinstance(kind, str) or kind not in _KEYS:
        raise SettingError(f"Unknown setting kind {kind!r}")
    unknown = set(source) - _KEYS[kind] - {"kind"}
    if unknown:
        raise SettingError(f"Unknown keys for {kind}: {sorted(unknown)}")

    if kind == "single_item_revenue":
        return SingleItemRevenue(
            n_bidders=_int(source, "n_bidders", 2),
            distribution=_distribution(source),
            epsilon=_float(source, "epsilon", DEFAULT_EPSILON),
        )
    if kind == "rediscovery_per_bidder":
        return RediscoveryPerBidder(
            n_bidders=_int(source, "n_bidders", 2),
            marginal=_marginal(source),
            epsilon=_float(source, "epsilon", DEFAULT_EPSILON),
        )
    if kind == "vcg_redistribution":
        return VcgRedistribution(
            n_bidders=_int(source, "n_bidders", 4),
            n_items=_int(source, "n_items", 2),
            marginal=_marginal(source),
            fix_grid_resolution=_int(
                source, "fix_grid_resolution", DEFAULT_FIX_GRID_RESOLUTION
            ),
            reverse_fix=_reverse_fix(source),
            reverse_grid_resolution=_int(
                source, "reverse_grid_resolution", DEFAULT_REVERSE_GRID_RESOLUTION
            ),
        )

    inner_source = source.get("inner")
    if not isinstance(inner_source, Mapping):
        raise SettingError("Distillation needs an 'inner' setting mapping")
    inner = setting_from_dict(inner_source, base_dir)
    if isinstance(inner, Distillation):
        raise SettingError("Distillation settings can't be nested")

    goal_path = source.get("goal_path")
    if isinstance(goal_path, str) and base_dir is not None:
        # Written back absolute, so the setting reloads from anywhere
        goal_path = str(base_dir / goal_path)
    return Distillation(
        inner=inner,
        goal=_goal(source, base_dir),
        metric=_metric(source),
        sample_on_grid=_bool(source, "sample_on_grid", False),
        goal_path=goal_path if isinstance(goal_path, str) else None,
    )
