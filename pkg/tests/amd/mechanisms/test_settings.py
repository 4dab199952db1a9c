import json
import logging
from pathlib import Path

import numpy as np
import pytest

from amd.distributions import Beta, Uniform, default_grid, marginal
from amd.dsl.expr import SignatureKind
from amd.mechanisms.goal import GoalFunction, Metric, default_goal_function
from amd.mechanisms.settings import (
    Distillation,
    RediscoveryPerBidder,
    SettingError,
    SettingSpec,
    SingleItemRevenue,
    VcgRedistribution,
    setting_from_dict,
    setting_kind,
    setting_signature,
    setting_to_dict,
)
from amd.mechanisms.vcg import ReverseFix

SCALAR_GOAL = GoalFunction(grid=((0.0, 1.0),), values=np.array([0.0, 1.0]))


@pytest.mark.parametrize(
    "setting, kind, input_length, output_length",
    (
        (SingleItemRevenue(), SignatureKind.JOINT_ALLOCATION, 2, 3),
        (SingleItemRevenue(n_bidders=3), SignatureKind.JOINT_ALLOCATION, 3, 4),
        (RediscoveryPerBidder(), SignatureKind.PER_BIDDER_SCORE, None, None),
        (VcgRedistribution(), SignatureKind.REDISTRIBUTION, 3, None),
        (
            VcgRedistribution(n_bidders=6, n_items=3),
            SignatureKind.REDISTRIBUTION,
            5,
            None,
        ),
        (Distillation(), SignatureKind.REDISTRIBUTION, 3, None),
    ),
)
def test_setting_signature(
    setting: SettingSpec,
    kind: SignatureKind,
    input_length: int | None,
    output_length: int | None,
) -> None:
    signature = setting_signature(setting)
    assert signature.kind is kind
    assert signature.input_length == input_length
    assert signature.output_length == output_length


def test_single_item_marginal() -> None:
    assert SingleItemRevenue().marginal == Uniform()
    assert SingleItemRevenue(distribution=Beta(2, 5)).marginal == Beta(2, 5)
    assert SingleItemRevenue(distribution=default_grid()).marginal is None


@pytest.mark.parametrize(
    "factory",
    (
        lambda: SingleItemRevenue(n_bidders=0),
        lambda: SingleItemRevenue(n_bidders=3, distribution=default_grid()),
        lambda: SingleItemRevenue(epsilon=0),
        lambda: SingleItemRevenue(epsilon=1.5),
        lambda: RediscoveryPerBidder(n_bidders=0),
        lambda: RediscoveryPerBidder(marginal=default_grid()),  # type: ignore
        lambda: VcgRedistribution(n_bidders=2, n_items=2),
        lambda: VcgRedistribution(n_items=0),
        lambda: VcgRedistribution(marginal=default_grid()),  # type: ignore
        lambda: VcgRedistribution(fix_grid_resolution=1),
        lambda: VcgRedistribution(reverse_grid_resolution=1),
        # The shipped goal takes 3 inputs
        lambda: Distillation(inner=VcgRedistribution(n_bidders=3, n_items=1)),
        lambda: Distillation(inner=SingleItemRevenue(), goal=SCALAR_GOAL),
        lambda: Distillation(
            inner=RediscoveryPerBidder(), goal=default_goal_function()
        ),
    ),
)
def test_setting_invalid(factory) -> None:  # type: ignore
    with pytest.raises(SettingError):
        factory()


def test_distillation_per_bidder_goal() -> None:
    setting = Distillation(inner=RediscoveryPerBidder(), goal=SCALAR_GOAL)
    assert setting_signature(setting).kind is SignatureKind.PER_BIDDER_SCORE


def test_distillation_warns_about_metric(caplog: pytest.LogCaptureFixture) -> None:
    with caplog.at_level(logging.WARNING):
        Distillation(metric=Metric.L1)
    assert "suggests L2" in caplog.text


@pytest.mark.parametrize(
    "setting, kind",
    (
        (SingleItemRevenue(), "single_item_revenue"),
        (RediscoveryPerBidder(), "rediscovery_per_bidder"),
        (VcgRedistribution(), "vcg_redistribution"),
        (Distillation(), "distillation"),
    ),
)
def test_setting_kind(setting: SettingSpec, kind: str) -> None:
    assert setting_kind(setting) == kind


@pytest.mark.parametrize(
    "setting",
    (
        SingleItemRevenue(),
        SingleItemRevenue(n_bidders=3, distribution=Beta(2, 5), epsilon=0.01),
        SingleItemRevenue(distribution=default_grid()),
        RediscoveryPerBidder(n_bidders=3, marginal=marginal(default_grid(), 1)),
        VcgRedistribution(),
        VcgRedistribution(
            n_bidders=5,
            n_items=3,
            marginal=Beta(2, 2),
            fix_grid_resolution=51,
            reverse_fix=ReverseFix.MAX,
            reverse_grid_resolution=11,
        ),
        Distillation(metric=Metric.L1, sample_on_grid=True),
    ),
)
def test_setting_dict_roundtrip(setting: SettingSpec) -> None:
    source = setting_to_dict(setting)
    # The dict form is plain json
    assert json.loads(json.dumps(source)) == source

    result = setting_from_dict(source)
    if isinstance(setting, Distillation):
        assert isinstance(result, Distillation)
        assert result.inner == setting.inner
        assert result.metric is setting.metric
        assert result.sample_on_grid == setting.sample_on_grid
    else:
        assert result == setting


@pytest.mark.parametrize(
    "source, setting",
    (
        ({"kind": "single_item_revenue"}, SingleItemRevenue()),
        ({"kind": "rediscovery_per_bidder"}, RediscoveryPerBidder()),
        ({"kind": "vcg_redistribution"}, VcgRedistribution()),
        (
            {"kind": "single_item_revenue", "n_bidders": 3, "epsilon": 1},
            SingleItemRevenue(n_bidders=3, epsilon=1.0),
        ),
        (
            {"kind": "vcg_redistribution", "reverse_fix": "min"},
            VcgRedistribution(reverse_fix=ReverseFix.MIN),
        ),
        (
            {
                "kind": "rediscovery_per_bidder",
                "distribution": {"kind": "beta", "alpha": 2, "beta": 5},
            },
            RediscoveryPerBidder(marginal=Beta(2, 5)),
        ),
    ),
)
def test_setting_from_dict_defaults(
    source: dict[str, object], setting: SettingSpec
) -> None:
    assert setting_from_dict(source) == setting


def test_distillation_from_dict_defaults() -> None:
    setting = setting_from_dict(
        {"kind": "distillation", "inner": {"kind": "vcg_redistribution"}}
    )
    assert isinstance(setting, Distillation)
    assert setting.inner == VcgRedistribution()
    assert setting.goal is default_goal_function()
    assert setting.metric is Metric.L2
    assert not setting.sample_on_grid
    assert setting.goal_path is None


def test_distillation_goal_path(tmp_path: Path) -> None:
    (tmp_path / "goal.json").write_text(
        json.dumps({"grid": [[0, 1]], "values": [0, 2], "metric_hint": "L1"})
    )
    source = {
        "kind": "distillation",
        "inner": {"kind": "rediscovery_per_bidder"},
        "goal_path": "goal.json",
        "metric": "L1",
    }

    setting = setting_from_dict(source, base_dir=tmp_path)
    assert isinstance(setting, Distillation)
    assert setting.goal([[0.25]]) == pytest.approx([0.5])
    assert setting_to_dict(setting)["goal_path"] == str(tmp_path / "goal.json")

    with pytest.raises(SettingError):
        setting_from_dict(source, base_dir=tmp_path / "missing")


@pytest.mark.parametrize(
    "source",
    (
        {},
        {"kind": "unknown"},
        {"kind": 1},
        {"kind": "single_item_revenue", "n_items": 2},
        {"kind": "single_item_revenue", "n_bidders": "2"},
        {"kind": "single_item_revenue", "n_bidders": True},
        {"kind": "single_item_revenue", "n_bidders": 2.0},
        {"kind": "single_item_revenue", "epsilon": "small"},
        {"kind": "single_item_revenue", "distribution": "uniform"},
        {"kind": "single_item_revenue", "distribution": {"kind": "normal"}},
        {"kind": "single_item_revenue", "distribution": {"kind": "beta"}},
        {"kind": "rediscovery_per_bidder", "distribution": {"kind": "grid"}},
        {"kind": "vcg_redistribution", "reverse_fix": "median"},
        {"kind": "vcg_redistribution", "n_items": 4},
        {"kind": "distillation"},
        {"kind": "distillation", "inner": "vcg_redistribution"},
        {"kind": "distillation", "inner": {"kind": "distillation"}},
        {
            "kind": "distillation",
            "inner": {"kind": "vcg_redistribution"},
            "metric": "L3",
        },
        {
            "kind": "distillation",
            "inner": {"kind": "vcg_redistribution"},
            "sample_on_grid": "yes",
        },
        {
            "kind": "distillation",
            "inner": {"kind": "vcg_redistribution"},
            "goal_path": 3,
        },
    ),
)
def test_setting_from_dict_invalid(source: dict[str, object]) -> None:
    with pytest.raises(SettingError):
        setting_from_dict(source)
