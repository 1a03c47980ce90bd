from .ast import (
    And,
    Atom,
    Cf,
    Delta,
    Eventually,
    Globally,
    Implies,
    Next,
    Not,
    Or,
    Prob,
    Reward,
    TrueF,
    Until,
    expand,
    formula_horizon,
    is_state_formula,
)
from .parser import FormulaSyntaxError, parse_formula, parse_path_formula, pretty_print
from .semantics import PathTooShortError, eval_path_formula, truth_table

__all__ = [
    "And",
    "Atom",
    "Cf",
    "Delta",
    "Eventually",
    "FormulaSyntaxError",
    "Globally",
    "Implies",
    "Next",
    "Not",
    "Or",
    "PathTooShortError",
    "Prob",
    "Reward",
    "TrueF",
    "Until",
    "eval_path_formula",
    "expand",
    "formula_horizon",
    "is_state_formula",
    "parse_formula",
    "parse_path_formula",
    "pretty_print",
    "truth_table",
]
