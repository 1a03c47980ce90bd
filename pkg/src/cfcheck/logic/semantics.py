"""Finite-path semantics for path formulas.

Two evaluators share one meaning. :func:`eval_path_formula` follows the
bounded-until clause literally on a single path; :func:`truth_table` computes
the same verdicts for a whole batch of paths at every position at once and is
what the estimators use.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .ast import (
    And,
    Atom,
    Eventually,
    Globally,
    Implies,
    Next,
    Not,
    Or,
    Quantitative,
    TrueF,
    Until,
    expand,
    formula_horizon,
)


class PathTooShortError(ValueError):
    pass


# oracle(prefix_length, node) -> bool for a state sub-formula evaluated on path[1:prefix_length]
StateOracle = Callable[[int, object], bool]


def eval_path_formula(oracle: StateOracle, length: int, pos: int, phi) -> bool:
    """Whether the path satisfies ``phi`` at 1-based position ``pos``.

    ``oracle(k, node)`` decides atoms and quantitative sub-formulas on the
    prefix of length ``k``; the path itself is only seen through it.
    """
    if pos + formula_horizon(phi) > length:
        raise PathTooShortError(f"need {pos + formula_horizon(phi)} positions, path has {length}")
    return _eval(oracle, pos, phi)


def _eval(oracle, pos, phi) -> bool:
    if isinstance(phi, TrueF):
        return True
    if isinstance(phi, (Atom,) + Quantitative):
        return bool(oracle(pos, phi))
    if isinstance(phi, Not):
        return not _eval(oracle, pos, phi.arg)
    if isinstance(phi, And):
        return _eval(oracle, pos, phi.left) and _eval(oracle, pos, phi.right)
    if isinstance(phi, Until):
        return any(
            _eval(oracle, pos + t1, phi.right) and all(_eval(oracle, pos + t2, phi.left) for t2 in range(t1))
            for t1 in range(phi.lo, phi.hi + 1)
        )
    if isinstance(phi, (Or, Implies, Eventually, Globally, Next)):
        return _eval(oracle, pos, expand(phi))
    raise TypeError(f"not a path formula node: {phi!r}")


def labels_oracle(mdp, state_indices) -> StateOracle:
    """Oracle for formulas without quantitative sub-nodes over a concrete path."""

    def oracle(k, node):
        if isinstance(node, Atom):
            return node.name in mdp.labels[int(state_indices[k - 1])]
        raise TypeError("quantitative sub-formula needs a model-aware oracle")

    return oracle


# batch evaluation ------------------------------------------------------------

# leaf(node, paths) -> (N, L) bool: verdict of a state sub-formula on every prefix
LeafFn = Callable[[object, np.ndarray], np.ndarray]


def atom_leaf(mdp) -> LeafFn:
    masks: dict[str, np.ndarray] = {}

    def leaf(node, paths):
        if isinstance(node, Atom):
            if node.name not in masks:
                masks[node.name] = mdp.label_mask(node.name)
            return masks[node.name][paths]
        raise TypeError("quantitative sub-formula needs a model-aware leaf")

    return leaf


def truth_table(phi, paths: np.ndarray, leaf: LeafFn) -> np.ndarray:
    """``out[i, j]`` is whether path ``i`` satisfies ``phi`` at position ``j + 1``.

    Entries whose horizon runs past the end of the path are ``False``.
    """
    n, length = paths.shape
    if isinstance(phi, TrueF):
        return np.ones((n, length), dtype=bool)
    if isinstance(phi, (Atom,) + Quantitative):
        return np.asarray(leaf(phi, paths), dtype=bool)
    if isinstance(phi, Not):
        out = ~truth_table(phi.arg, paths, leaf)
        h = formula_horizon(phi.arg)
        if h:
            out[:, length - h :] = False
        return out
    if isinstance(phi, And):
        return truth_table(phi.left, paths, leaf) & truth_table(phi.right, paths, leaf)
    if isinstance(phi, Until):
        left = truth_table(phi.left, paths, leaf)
        right = truth_table(phi.right, paths, leaf)
        out = np.zeros((n, length), dtype=bool)
        run = np.ones((n, length), dtype=bool)  # left held on [j, j + t1)
        for t1 in range(phi.hi + 1):
            if t1 >= phi.lo:
                hit = np.zeros((n, length), dtype=bool)
                hit[:, : length - t1] = right[:, t1:]
                out |= run & hit
            shifted = np.zeros((n, length), dtype=bool)
            shifted[:, : length - t1] = left[:, t1:]
            run &= shifted
        h = formula_horizon(phi)
        if h:
            out[:, max(length - h, 0) :] = False
        return out
    return truth_table(expand(phi), paths, leaf)
