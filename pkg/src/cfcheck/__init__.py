"""Counterfactual and causal temporal-logic checking for MDPs via Gumbel-max SCMs."""

from .checker import CheckParams, Checker, check_state_formula
from .gumbel import EMPTY, CounterfactualModel, Intervention, ScmConfig, build_counterfactual_model
from .logic import parse_formula, pretty_print
from .mdp import GridConfig, Mdp, Path, Policy, build_gridworld, grid_policies
from .stats import Estimate, Truth, Verdict

__all__ = [
    "EMPTY",
    "CheckParams",
    "Checker",
    "CounterfactualModel",
    "Estimate",
    "GridConfig",
    "Intervention",
    "Mdp",
    "Path",
    "Policy",
    "ScmConfig",
    "Truth",
    "Verdict",
    "build_counterfactual_model",
    "build_gridworld",
    "check_state_formula",
    "grid_policies",
    "parse_formula",
    "pretty_print",
]
