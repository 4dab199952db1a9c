"""
Run configuration

A run is described by one JSON or TOML file. Every section is optional and
missing keys take the defaults listed by describe_defaults.
"""

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum, unique
from pathlib import Path
from typing import Any, Self, TypedDict

import toml

from amd import distributions
from amd.distributions import MarginalDistribution
from amd.evaluation import DEFAULT_REDISTRIBUTION_SAMPLES, DEFAULT_REVENUE_SAMPLES
from amd.evolution.config import DEFAULTS as EVOLUTION_DEFAULTS
from amd.evolution.config import EvolutionConfig
from amd.mechanisms.settings import (
    Distillation,
    RediscoveryPerBidder,
    SettingSpec,
    SingleItemRevenue,
    VcgRedistribution,
    setting_from_dict,
    setting_to_dict,
)
from amd.proposers.llm import LlmEndpointConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Exception raised when the run configuration is invalid"""


@unique
class ProposerKind(str, Enum):
    SYMBOLIC = "symbolic"
    LLM = "llm"


class RunConfigDict(TypedDict, total=False):
    """Dict form of a run configuration, as read from file"""

    setting: dict[str, Any]
    evolution: dict[str, Any]
    proposer: dict[str, Any]
    evaluation: dict[str, Any]
    seed: int | None
    output_dir: str | None
    resume: bool


def default_samples(setting: SettingSpec) -> int:
    """Sample size used for a setting when the config doesn't name one"""
    match setting:
        case SingleItemRevenue() | RediscoveryPerBidder():
            return DEFAULT_REVENUE_SAMPLES
        case VcgRedistribution() | Distillation():
            return DEFAULT_REDISTRIBUTION_SAMPLES


@dataclass(frozen=True, slots=True)
class EvaluationConfig:
    """
    How candidates are scored

    n_samples and test_samples None mean the default for the setting.
    A non empty distributions tuple scores every candidate as the mean over
    those marginals. workers None means the recommendation for this machine.
    """

    n_samples: int | None = None
    seed: int = 0
    test_samples: int | None = None
    test_seed: int = 1
    distributions: tuple[MarginalDistribution, ...] = ()
    workers: int | None = None

    def __post_init__(self) -> None:
        for name in ("n_samples", "test_samples", "workers"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"evaluation.{name} must be at least 1")

    @classmethod
    def from_dict(cls, source: Mapping[str, object]) -> Self:
        _check_keys(source, EVALUATION_DEFAULTS, "evaluation")

        raw_distributions = source.get("distributions", [])
        if not isinstance(raw_distributions, list):
            raise ConfigError("evaluation.distributions must be a list")
        marginals: list[MarginalDistribution] = []
        for index, raw in enumerate(raw_distributions):
            path = f"evaluation.distributions[{index}]"
            if not isinstance(raw, Mapping):
                raise ConfigError(f"{path} must be a table")
            try:
                distribution = distributions.distribution_from_dict(raw)
            except ValueError as e:
                raise ConfigError(f"{path}: {e}") from e
            if isinstance(distribution, distributions.GridJointDistribution):
                raise ConfigError(f"{path} must be a marginal distribution")
            marginals.append(distribution)

        return cls(
            n_samples=_optional_int(source, "evaluation", "n_samples"),
            seed=_int(source, "evaluation", "seed", 0),
            test_samples=_optional_int(source, "evaluation", "test_samples"),
            test_seed=_int(source, "evaluation", "test_seed", 1),
            distributions=tuple(marginals),
            workers=_optional_int(source, "evaluation", "workers"),
        )

    def to_dict(self) -> dict[str, object]:
        return {
            "n_samples": self.n_samples,
            "seed": self.seed,
            "test_samples": self.test_samples,
            "test_seed": self.test_seed,
            "distributions": [
                distributions.distribution_to_dict(marginal)
                for marginal in self.distributions
            ],
            "workers": self.workers,
        }

    def samples_for(self, setting: SettingSpec) -> int:
        return self.n_samples or default_samples(setting)

    def test_samples_for(self, setting: SettingSpec) -> int:
        return self.test_samples or self.samples_for(setting)


EVALUATION_DEFAULTS = EvaluationConfig().to_dict()


@dataclass(frozen=True, slots=True)
class RunConfig:
    """Everything needed to start or continue an evolution run"""

    setting: SettingSpec = field(default_factory=VcgRedistribution)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    proposer: ProposerKind = ProposerKind.SYMBOLIC
    llm: LlmEndpointConfig | None = None
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    seed: int | None = None
    output_dir: Path | None = None
    resume: bool = False

    @classmethod
    def from_dict(
        cls, source: Mapping[str, object], base_dir: Path | None = None
    ) -> Self:
        """
        Validate and build a config

        Relative paths (the output dir and goal files) are resolved against
        base_dir.
        """
        _check_keys(source, TOP_LEVEL_DEFAULTS, "")

        setting_source = _section(source, "setting")
        try:
            setting = setting_from_dict(
                setting_source or DEFAULT_SETTING, base_dir=base_dir
            )
        except ValueError as e:
            raise ConfigError(f"setting: {e}") from e

        try:
            evolution = EvolutionConfig.from_dict(_section(source, "evolution"))
        except ValueError as e:
            raise ConfigError(f"evolution: {e}") from e

        proposer, llm = _proposer(_section(source, "proposer"))
        evaluation = EvaluationConfig.from_dict(_section(source, "evaluation"))

        output_dir = source.get("output_dir", None)
        if output_dir is not None and not isinstance(output_dir, str):
            raise ConfigError("output_dir must be a string")
        resume = source.get("resume", False)
        if not isinstance(resume, bool):
            raise ConfigError("resume must be a bool")

        output_path = None
        if output_dir is not None:
            output_path = Path(output_dir)
            if base_dir is not None and not output_path.is_absolute():
                output_path = base_dir / output_path

        return cls(
            setting=setting,
            evolution=evolution,
            proposer=proposer,
            llm=llm,
            evaluation=evaluation,
            seed=_optional_int(source, "", "seed"),
            output_dir=output_path,
            resume=resume,
        )

    def to_dict(self) -> RunConfigDict:
        proposer: dict[str, Any] = {"kind": self.proposer.value}
        if self.llm is not None:
            proposer.update(self.llm.to_dict())

        return {
            "setting": setting_to_dict(self.setting),
            "evolution": self.evolution.to_dict(),
            "proposer": proposer,
            "evaluation": self.evaluation.to_dict(),
            "seed": self.seed,
            "output_dir": None if self.output_dir is None else str(self.output_dir),
            "resume": self.resume,
        }


DEFAULT_SETTING = {"kind": "vcg_redistribution"}

LLM_KEYS = frozenset(LlmEndpointConfig("-", "-").to_dict()) | {"kind"}

TOP_LEVEL_DEFAULTS: RunConfigDict = {
    "setting": DEFAULT_SETTING,
    "evolution": EVOLUTION_DEFAULTS,
    "proposer": {"kind": ProposerKind.SYMBOLIC.value},
    "evaluation": EVALUATION_DEFAULTS,
    "seed": None,
    "output_dir": None,
    "resume": False,
}


def _name(section: str, key: str) -> str:
    return f"{section}.{key}" if section else key


def _check_keys(
    source: Mapping[str, object], allowed: Mapping[str, object], section: str
) -> None:
    unknown = sorted(set(source) - set(allowed))
    if unknown:
        names = ", ".join(_name(section, key) for key in unknown)
        raise ConfigError(f"Unknown config key(s): {names}")


def _section(source: Mapping[str, object], key: str) -> Mapping[str, object]:
    value = source.get(key, {})
    if not isinstance(value, Mapping):
        raise ConfigError(f"{key} must be a table")
    return value


def _optional_int(source: Mapping[str, object], section: str, key: str) -> int | None:
    value = source.get(key, None)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{_name(section, key)} must be an integer")
    return value


def _int(source: Mapping[str, object], section: str, key: str, default: int) -> int:
    value = _optional_int(source, section, key)
    return default if value is None else value


def _proposer(
    source: Mapping[str, object],
) -> tuple[ProposerKind, LlmEndpointConfig | None]:
    raw_kind = source.get("kind", ProposerKind.SYMBOLIC.value)
    try:
        kind = ProposerKind(raw_kind)
    except ValueError as e:
        raise ConfigError(f"proposer.kind must be one of {_kinds()}") from e

    if kind is ProposerKind.SYMBOLIC:
        _check_keys(source, {"kind": None}, "proposer")
        return kind, None

    _check_keys(source, dict.fromkeys(LLM_KEYS), "proposer")
    try:
        llm = LlmEndpointConfig.from_dict(source)
    except ValueError as e:
        raise ConfigError(str(e)) from e

    if llm.api_key_env is not None and llm.api_key is None:
        raise ConfigError(
            f"Environment variable {llm.api_key_env} (proposer.api_key_env) "
            "is not set"
        )
    return kind, llm


def _kinds() -> list[str]:
    return [kind.value for kind in ProposerKind]


def read_config(path: Path) -> RunConfig:
    """Read and validate the config file at path"""
    try:
        with path.open("r") as f:
            if path.suffix == ".json":
                raw = json.load(f)
            elif path.suffix == ".toml":
                raw = toml.load(f)
            else:
                raise ConfigError(
                    f"Config files must be .json or .toml, got {path.name}"
                )
    except OSError as e:
        raise ConfigError(f"Could not read config file {path}: {e}") from e
    except (json.JSONDecodeError, toml.TomlDecodeError) as e:
        raise ConfigError(f"Could not parse config file {path}: {e}") from e

    if not isinstance(raw, Mapping):
        raise ConfigError("The config file must contain a table")

    config = RunConfig.from_dict(raw, base_dir=path.parent)
    logger.debug(f"Read config from {path}: {config.to_dict()}")
    return config


def _flatten(prefix: str, source: Mapping[str, object]) -> list[tuple[str, object]]:
    items: list[tuple[str, object]] = []
    for key, value in source.items():
        name = _name(prefix, key)
        if isinstance(value, Mapping):
            items.extend(_flatten(name, value))
        else:
            items.append((name, value))
    return items


def describe_defaults() -> str:
    """Every config key with its default, one per line"""
    llm_defaults = {
        key: value
        for key, value in LlmEndpointConfig("-", "-").to_dict().items()
        if key not in ("base_url", "model")
    }
    items = _flatten("", TOP_LEVEL_DEFAULTS)
    items += [("proposer.base_url", "(required for llm)")]
    items += [("proposer.model", "(required for llm)")]
    items += _flatten("proposer", llm_defaults)

    width = max(len(name) for name, _ in items)
    return "\n".join(
        f"  {name.ljust(width)}  {json.dumps(value)}" for name, value in items
    )
