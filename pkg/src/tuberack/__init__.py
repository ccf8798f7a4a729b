"""Combined task and motion planning for test-tube rack rearrangement."""

from .orchestrator import CombinedPlan, Exhausted, PlannerBudget, PlannerConfig, plan_combined, replay
from .rack import GoalPattern, HoleCoord, MoveAction, RackLayout, RackState, TubeType, apply_move, is_goal
from .scenario import Scenario, load_scenario, save_scenario
from .search import WeightMap, default_filter_bank, search
from .world import GripperModel, WorldModel

__all__ = [
    "CombinedPlan", "Exhausted", "GoalPattern", "GripperModel", "HoleCoord", "MoveAction", "PlannerBudget",
    "PlannerConfig", "RackLayout", "RackState", "Scenario", "TubeType", "WeightMap", "WorldModel",
    "apply_move", "default_filter_bank", "is_goal", "load_scenario", "plan_combined", "replay",
    "save_scenario", "search",
]
