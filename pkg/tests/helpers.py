"""Independent oracles and generators shared by the test modules."""

from __future__ import annotations

import itertools

import numpy as np

from cfcheck.logic.ast import (
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
)
from cfcheck.logic.semantics import eval_path_formula, labels_oracle
from cfcheck.mdp import Mdp, Policy

ATOMS = ("a", "b", "c")


def random_mdp(rng: np.random.Generator, n_states: int | None = None, n_actions: int = 2, sparsity: float = 0.4) -> Mdp:
    """Small random MDP over states s0.. with atoms a, b, c and integer rewards."""
    n = n_states or int(rng.integers(2, 5))
    states = [f"s{i}" for i in range(n)]
    actions = [f"u{j}" for j in range(n_actions)]
    trans = {}
    for s in states:
        trans[s] = {}
        for a in actions:
            p = rng.dirichlet(np.ones(n))
            mask = rng.random(n) < sparsity
            mask[rng.integers(n)] = False
            p = np.where(mask, 0.0, p)
            p /= p.sum()
            trans[s][a] = {s2: float(q) for s2, q in zip(states, p) if q > 0}
    labels = {s: [x for x in ATOMS if rng.random() < 0.4] for s in states}
    rewards = {s: {a: float(rng.integers(0, 4)) for a in actions} for s in states}
    init = {states[0]: 1.0}
    return Mdp.from_tables(states, actions, trans, init, rewards, labels, ATOMS)


def random_policy(mdp: Mdp, rng: np.random.Generator) -> Policy:
    return Policy({s: mdp.actions[int(rng.integers(len(mdp.actions)))] for s in mdp.states})


def enumerate_paths(mdp: Mdp, policy: Policy, start: int, length: int):
    """Every state-index sequence of ``length`` states from ``start`` with its probability."""
    pol = policy.to_array(mdp)
    frontier = [((start,), 1.0)]
    for _ in range(length - 1):
        nxt = []
        for seq, p in frontier:
            s = seq[-1]
            row = mdp.trans[s, pol[s]]
            for s2 in np.flatnonzero(row):
                nxt.append((seq + (int(s2),), p * float(row[s2])))
        frontier = nxt
    return frontier


def exact_path_prob(mdp: Mdp, policy: Policy, start: int, phi, length: int) -> float:
    """Probability of ``phi`` at position 1 by brute-force path enumeration."""
    total = 0.0
    for seq, p in enumerate_paths(mdp, policy, start, length):
        if eval_path_formula(labels_oracle(mdp, seq), length, 1, phi):
            total += p
    return total


def exact_reward(mdp: Mdp, policy: Policy, start: int, lo: int, hi: int) -> float:
    pol = policy.to_array(mdp)
    total = 0.0
    for seq, p in enumerate_paths(mdp, policy, start, hi + 1):
        total += p * sum(mdp.reward[s, pol[s]] for s in seq[lo : hi + 1])
    return total


def random_path_formula(rng: np.random.Generator, depth: int = 3, max_bound: int = 3):
    """Path formula over atoms a, b, c without nested quantitative operators."""
    if depth == 0 or rng.random() < 0.25:
        return TrueF() if rng.random() < 0.1 else Atom(ATOMS[int(rng.integers(len(ATOMS)))])
    kind = int(rng.integers(8))
    sub = lambda: random_path_formula(rng, depth - 1, max_bound)  # noqa: E731
    lo = int(rng.integers(0, max_bound + 1))
    hi = lo + int(rng.integers(0, max_bound - lo + 1))
    return [
        lambda: Not(sub()),
        lambda: And(sub(), sub()),
        lambda: Or(sub(), sub()),
        lambda: Implies(sub(), sub()),
        lambda: Until(sub(), lo, hi, sub()),
        lambda: Eventually(lo, hi, sub()),
        lambda: Globally(lo, hi, sub()),
        lambda: Next(sub()),
    ][kind]()


def _ilist(rng):
    if rng.random() < 0.2:
        return ()
    return tuple(rng.choice(["opt", "rand", "p_1", "x"], size=int(rng.integers(1, 3))).tolist())


def random_state_formula(rng: np.random.Generator, depth: int = 3):
    """Arbitrary state formula, including causal operators and nesting, for syntax tests."""
    if depth == 0 or rng.random() < 0.2:
        return TrueF() if rng.random() < 0.15 else Atom(str(rng.choice(["a", "b", "unsafe", "x y", "ü"])))
    kind = int(rng.integers(9))
    sub = lambda: random_state_formula(rng, depth - 1)  # noqa: E731
    ops = ["<", "<=", ">", ">="]

    def prob():
        if rng.random() < 0.3:
            return Prob("=?", None, _path(rng, depth - 1))
        return Prob(str(rng.choice(ops)), float(rng.choice([0.0, 0.5, 1.0, round(rng.random(), 3), 1e-3])), _path(rng, depth - 1))

    def reward():
        lo = int(rng.integers(0, 4))
        op = "=?" if rng.random() < 0.3 else str(rng.choice(ops))
        thr = None if op == "=?" else float(rng.choice([-2.5, 0.0, 3.0, 12.25]))
        return Reward(op, thr, lo, lo + int(rng.integers(0, 4)))

    def body():
        return prob() if rng.random() < 0.7 else reward()

    def delta():
        b = body()
        if isinstance(b, Prob) and b.threshold is not None:
            b = Prob(b.op, -b.threshold, b.path)
        return Delta(_ilist(rng), _ilist(rng), int(rng.integers(-5, 6)), b)

    return [
        lambda: Not(sub()),
        lambda: And(sub(), sub()),
        lambda: Or(sub(), sub()),
        lambda: Implies(sub(), sub()),
        prob,
        reward,
        lambda: Cf(_ilist(rng), int(rng.integers(-5, 6)), body()),
        delta,
        prob,
    ][kind]()


def _path(rng, depth):
    if depth <= 0 or rng.random() < 0.3:
        return random_state_formula(rng, max(depth - 1, 0))
    kind = int(rng.integers(7))
    sub = lambda: _path(rng, depth - 1)  # noqa: E731
    lo = int(rng.integers(0, 5))
    hi = lo + int(rng.integers(0, 5))
    return [
        lambda: Not(sub()),
        lambda: And(sub(), sub()),
        lambda: Or(sub(), sub()),
        lambda: Until(sub(), lo, hi, sub()),
        lambda: Eventually(lo, hi, sub()),
        lambda: Globally(lo, hi, sub()),
        lambda: Next(sub()),
    ][kind]()


def all_label_paths(length: int, atoms=("a", "b")):
    """Every assignment of atom sets to ``length`` positions."""
    subsets = [frozenset(c) for r in range(len(atoms) + 1) for c in itertools.combinations(atoms, r)]
    return itertools.product(subsets, repeat=length)
