"""Formula syntax trees.

Boolean connectives are shared between state and path formulas; a formula is
a state formula when no temporal operator occurs outside a probabilistic,
reward, counterfactual or causal-effect node. Derived operators (``F``, ``G``,
``X``, ``|``, ``->``) stay as their own nodes so printing preserves them;
:func:`expand` rewrites them into the core set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

COMPARATORS = ("<", "<=", ">", ">=")
QUERY = "=?"


@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Until:
    left: "Formula"
    lo: int
    hi: int
    right: "Formula"


@dataclass(frozen=True)
class Eventually:
    lo: int
    hi: int
    arg: "Formula"


@dataclass(frozen=True)
class Globally:
    lo: int
    hi: int
    arg: "Formula"


@dataclass(frozen=True)
class Next:
    arg: "Formula"


@dataclass(frozen=True)
class Prob:
    op: str
    threshold: Optional[float]
    path: "Formula"


@dataclass(frozen=True)
class Reward:
    op: str
    threshold: Optional[float]
    lo: int
    hi: int


@dataclass(frozen=True)
class Cf:
    """``I@t.P...`` / ``I@t.R...``; ``intervention`` is a tuple of policy names."""

    intervention: tuple[str, ...]
    offset: int
    body: Union[Prob, Reward]


@dataclass(frozen=True)
class Delta:
    treatment: tuple[str, ...]
    control: tuple[str, ...]
    offset: int
    body: Union[Prob, Reward]


Formula = Union[TrueF, Atom, Not, And, Or, Implies, Until, Eventually, Globally, Next, Prob, Reward, Cf, Delta]
Quantitative = (Prob, Reward, Cf, Delta)
TEMPORAL = (Until, Eventually, Globally, Next)


def is_query(node) -> bool:
    body = node.body if isinstance(node, (Cf, Delta)) else node
    return isinstance(body, (Prob, Reward)) and body.op == QUERY


def is_state_formula(node) -> bool:
    if isinstance(node, TEMPORAL):
        return False
    if isinstance(node, Quantitative) or isinstance(node, (TrueF, Atom)):
        return True
    return all(is_state_formula(c) for c in children(node))


def children(node) -> tuple:
    if isinstance(node, Not) or isinstance(node, Next):
        return (node.arg,)
    if isinstance(node, (And, Or, Implies)):
        return (node.left, node.right)
    if isinstance(node, Until):
        return (node.left, node.right)
    if isinstance(node, (Eventually, Globally)):
        return (node.arg,)
    return ()


def expand(node):
    """Rewrite derived operators one level deep into ``True``, ``!``, ``&`` and ``U``."""
    if isinstance(node, Or):
        return Not(And(Not(node.left), Not(node.right)))
    if isinstance(node, Implies):
        return Not(And(node.left, Not(node.right)))
    if isinstance(node, Eventually):
        return Until(TrueF(), node.lo, node.hi, node.arg)
    if isinstance(node, Globally):
        return Not(Until(TrueF(), node.lo, node.hi, Not(node.arg)))
    if isinstance(node, Next):
        return Until(TrueF(), 1, 1, node.arg)
    return node


def formula_horizon(node) -> int:
    """Future steps needed to decide ``node`` on a path.

    Nested probabilistic nodes spawn their own rollouts and count as 0 inside
    a path formula. For a quantitative node itself the result is the span its
    own rollout must cover, measured from where it is evaluated; a
    counterfactual offset ``t > 0`` adds the ``t`` steps back to the
    intervention point.
    """
    return _path_horizon(node) if not isinstance(node, Quantitative) else _own_horizon(node)


def _own_horizon(node) -> int:
    if isinstance(node, Prob):
        return _path_horizon(node.path)
    if isinstance(node, Reward):
        return node.hi
    return _own_horizon(node.body) + max(node.offset, 0)


def rollout_horizon(node) -> int:
    """Steps a rollout from the evaluation start must cover for a Prob/Reward body."""
    body = node.body if isinstance(node, (Cf, Delta)) else node
    if isinstance(body, Prob):
        return _path_horizon(body.path)
    return body.hi


def _path_horizon(node) -> int:
    if isinstance(node, (TrueF, Atom)) or isinstance(node, Quantitative):
        return 0
    if isinstance(node, Until):
        return node.hi + max(_path_horizon(node.left), _path_horizon(node.right))
    if isinstance(node, (Eventually, Globally)):
        return node.hi + _path_horizon(node.arg)
    if isinstance(node, Next):
        return 1 + _path_horizon(node.arg)
    return max((_path_horizon(c) for c in children(node)), default=0)


def has_nested_quantitative(node) -> bool:
    """Whether a path formula contains probabilistic sub-formulas."""
    if isinstance(node, Quantitative):
        return True
    return any(has_nested_quantitative(c) for c in children(node))
