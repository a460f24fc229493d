"""Markov-chain prediction of cascading branch outages and robust,
injection-based protection against them."""

from .cascade_markov import (
    CascadePath, LambdaCache, SparseDistribution, beam_paths, constant_lambdas,
    expand_successors, fixed_lambdas, monte_carlo_cascade, path_probability,
    prevention_bound, propagate, transition_probability, uncertainty_set,
)
from .dc_flow import flow_map, solve_flow
from .errors import CascadeError
from .grid_model import Branch, GridCase, SlackPolicy, load_case, make_case
from .outage_model import OutageParams, branch_lambdas
from .robust_protect import (
    ElementaryConvexSet, build_constraint_set, check_feasibility, dykstra_project,
    solve_protection,
)
from .scenario import Scenario, load_scenario
from .state import TopologyState

__version__ = "0.1.0"
