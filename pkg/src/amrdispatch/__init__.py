"""Two-stage AMR dispatching: tabu-search prior plans and quick-response insertion."""

from .instance import (
    DynamicInstance,
    Priority,
    RequestSpec,
    StaticInstance,
    dynamize,
    load_solomon,
    parse_solomon,
)
from .routing import CostBreakdown, Mode, Network, Params, Route, Solution, solution_cost, validate
from .stochastic import GaussianTime, expected_lateness, max_with_constant, prob_before

__version__ = "0.1.0"
