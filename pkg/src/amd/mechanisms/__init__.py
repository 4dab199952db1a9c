from amd.mechanisms.goal import (
    GoalFunction,
    GoalFunctionError,
    Metric,
    default_goal_function,
    load_goal_function,
)
from amd.mechanisms.myerson import myerson_optimal, myerson_optimal_batch
from amd.mechanisms.outcome import MechanismOutcome, OutcomeBatch
from amd.mechanisms.settings import (
    Distillation,
    RediscoveryPerBidder,
    SettingError,
    SettingSpec,
    SingleItemRevenue,
    VcgRedistribution,
    setting_from_dict,
    setting_signature,
    setting_to_dict,
)
from amd.mechanisms.single_item import (
    adapt_per_bidder,
    critical_price,
    critical_prices_batch,
    solve_single_item,
    solve_single_item_batch,
)
from amd.mechanisms.vcg import (
    ReverseFix,
    corrected_fix,
    corrected_fix_batch,
    redistribution_vector,
    reverse_waterfill,
    reverse_waterfill_batch,
    vcg_unit_demand,
    vcg_unit_demand_batch,
    waterfill,
    waterfill_batch,
)

__all__ = [
    "Distillation",
    "GoalFunction",
    "GoalFunctionError",
    "MechanismOutcome",
    "Metric",
    "OutcomeBatch",
    "RediscoveryPerBidder",
    "ReverseFix",
    "SettingError",
    "SettingSpec",
    "SingleItemRevenue",
    "VcgRedistribution",
    "adapt_per_bidder",
    "corrected_fix",
    "corrected_fix_batch",
    "critical_price",
    "critical_prices_batch",
    "default_goal_function",
    "load_goal_function",
    "myerson_optimal",
    "myerson_optimal_batch",
    "redistribution_vector",
    "reverse_waterfill",
    "reverse_waterfill_batch",
    "setting_from_dict",
    "setting_signature",
    "setting_to_dict",
    "solve_single_item",
    "solve_single_item_batch",
    "vcg_unit_demand",
    "vcg_unit_demand_batch",
    "waterfill",
    "waterfill_batch",
]
