"""Doubly robust and TMLE estimators combining a probability sample with a nonprobability sample."""

from .popgen import FinitePopulation, ScenarioSpec, draw_outcomes, generate_population, scenario
from .design import SampleDraw, draw_replication
from .data import TwoSampleData, from_draw
from .crossfit import FoldPlan, build_plan

__version__ = "0.1.0"

__all__ = [
    "FinitePopulation",
    "ScenarioSpec",
    "SampleDraw",
    "TwoSampleData",
    "FoldPlan",
    "draw_outcomes",
    "draw_replication",
    "generate_population",
    "scenario",
    "from_draw",
    "build_plan",
]
