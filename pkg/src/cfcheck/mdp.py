"""Finite MDPs, deterministic policies, paths and the grid-world model."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Iterator, Mapping, Sequence

import numpy as np

ROW_TOL = 1e-9
GRID_ACTIONS = ("Up", "Down", "Left", "Right")
_MOVES = {"Up": (-1, 0), "Down": (1, 0), "Left": (0, -1), "Right": (0, 1)}

State = Hashable
Cell = tuple[int, int]


class ModelError(ValueError):
    """Raised for malformed models, policies, paths or configurations."""


@dataclass(frozen=True)
class Violation:
    kind: str  # "row_sum" | "range" | "init" | "label"
    location: tuple
    message: str


@dataclass(frozen=True, eq=False)
class Mdp:
    """Tabular MDP.

    ``trans[s, a]`` is the categorical next-state distribution for state index
    ``s`` and action index ``a``; ``defined[s, a]`` marks rows that exist.
    """

    states: tuple[State, ...]
    actions: tuple[str, ...]
    trans: np.ndarray
    defined: np.ndarray
    init: np.ndarray
    reward: np.ndarray
    labels: tuple[frozenset[str], ...]
    propositions: frozenset[str]

    @classmethod
    def from_tables(
        cls,
        states: Sequence[State],
        actions: Sequence[str],
        transitions: Mapping[State, Mapping[str, Mapping[State, float]]],
        init: Mapping[State, float],
        rewards: Mapping[State, Mapping[str, float]] | None = None,
        labels: Mapping[State, Iterable[str]] | None = None,
        propositions: Iterable[str] | None = None,
    ) -> "Mdp":
        states = tuple(states)
        actions = tuple(actions)
        if len(set(states)) != len(states) or len(set(actions)) != len(actions):
            raise ModelError("duplicate state or action identifiers")
        s_ix = {s: i for i, s in enumerate(states)}
        a_ix = {a: i for i, a in enumerate(actions)}

        def sidx(s):
            try:
                return s_ix[s]
            except KeyError:
                raise ModelError(f"unknown state {s!r}") from None

        def aidx(a):
            try:
                return a_ix[a]
            except KeyError:
                raise ModelError(f"unknown action {a!r}") from None

        n_s, n_a = len(states), len(actions)
        trans = np.zeros((n_s, n_a, n_s))
        defined = np.zeros((n_s, n_a), dtype=bool)
        for s, row_by_action in transitions.items():
            for a, row in row_by_action.items():
                i, j = sidx(s), aidx(a)
                defined[i, j] = True
                for s2, p in row.items():
                    trans[i, j, sidx(s2)] = float(p)
        init_arr = np.zeros(n_s)
        for s, p in init.items():
            init_arr[sidx(s)] = float(p)
        reward = np.zeros((n_s, n_a))
        for s, by_action in (rewards or {}).items():
            for a, r in by_action.items():
                reward[sidx(s), aidx(a)] = float(r)
        lab = [frozenset() for _ in states]
        for s, props in (labels or {}).items():
            lab[sidx(s)] = frozenset(props)
        if propositions is None:
            props = frozenset().union(*lab)
        else:
            props = frozenset(propositions)
        return cls(states, actions, trans, defined, init_arr, reward, tuple(lab), props)

    @cached_property
    def state_index(self) -> dict[State, int]:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def action_index(self) -> dict[str, int]:
        return {a: i for i, a in enumerate(self.actions)}

    @cached_property
    def log_trans(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.trans > 0, np.log(np.where(self.trans > 0, self.trans, 1.0)), -np.inf)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def sidx(self, s: State) -> int:
        try:
            return self.state_index[s]
        except KeyError:
            raise ModelError(f"unknown state {s!r}") from None

    def aidx(self, a: str) -> int:
        try:
            return self.action_index[a]
        except KeyError:
            raise ModelError(f"unknown action {a!r}") from None

    def label_mask(self, prop: str) -> np.ndarray:
        """Boolean vector over state indices: which states satisfy ``prop``."""
        return np.array([prop in lab for lab in self.labels], dtype=bool)

    def permuted(self, order: Sequence[int]) -> "Mdp":
        """Same MDP with states stored in a different internal order."""
        order = np.asarray(order)
        return Mdp(
            tuple(self.states[i] for i in order),
            self.actions,
            self.trans[order][:, :, order],
            self.defined[order],
            self.init[order],
            self.reward[order],
            tuple(self.labels[i] for i in order),
            self.propositions,
        )


def validate_mdp(mdp: Mdp) -> list[Violation]:
    """Collect every well-formedness problem of ``mdp``; an empty list means valid."""
    out: list[Violation] = []
    for i, s in enumerate(mdp.states):
        for j, a in enumerate(mdp.actions):
            if not mdp.defined[i, j]:
                continue
            row = mdp.trans[i, j]
            for k in np.flatnonzero((row < 0) | (row > 1)):
                out.append(Violation("range", (s, a, mdp.states[k]), f"P({mdp.states[k]!r}|{s!r},{a!r}) = {row[k]} outside [0,1]"))
            total = row.sum()
            if abs(total - 1.0) > ROW_TOL:
                out.append(Violation("row_sum", (s, a), f"row ({s!r},{a!r}) sums to {total:.12g}"))
    for k in np.flatnonzero((mdp.init < 0) | (mdp.init > 1)):
        out.append(Violation("range", ("init", mdp.states[k]), f"init({mdp.states[k]!r}) = {mdp.init[k]} outside [0,1]"))
    if abs(mdp.init.sum() - 1.0) > ROW_TOL:
        out.append(Violation("init", ("init",), f"init sums to {mdp.init.sum():.12g}"))
    for s, lab in zip(mdp.states, mdp.labels):
        for prop in sorted(lab - mdp.propositions):
            out.append(Violation("label", (s, prop), f"state {s!r} carries undeclared proposition {prop!r}"))
    return out


@dataclass(frozen=True)
class Policy:
    """Deterministic stationary policy, a total map from states to actions."""

    table: Mapping[State, str] = field(hash=False)

    def __call__(self, s: State) -> str:
        return self.table[s]

    def check(self, mdp: Mdp) -> None:
        missing = [s for s in mdp.states if s not in self.table]
        if missing:
            raise ModelError(f"policy undefined on states {missing[:5]!r}")
        bad = {s: a for s, a in self.table.items() if a not in mdp.action_index}
        if bad:
            raise ModelError(f"policy uses unknown actions {bad!r}")

    def to_array(self, mdp: Mdp) -> np.ndarray:
        """Action index for each state index."""
        self.check(mdp)
        return np.array([mdp.action_index[self.table[s]] for s in mdp.states], dtype=np.intp)

    @classmethod
    def from_array(cls, mdp: Mdp, arr: Sequence[int]) -> "Policy":
        return cls({s: mdp.actions[int(a)] for s, a in zip(mdp.states, arr)})


@dataclass(frozen=True)
class Path:
    """Finite sequence of (state, action) pairs.

    Indexing follows the 1-based convention used by the logic: ``path[i]`` for
    ``1 <= i <= len(path)`` is the i-th pair, ``path[0]`` is the last pair and
    ``path[-i]`` is ``path[len(path) - i]``. This deliberately differs from
    Python's own negative indexing.
    """

    steps: tuple[tuple[State, str], ...]

    def __post_init__(self):
        if not self.steps:
            raise ModelError("a path needs at least one step")
        object.__setattr__(self, "steps", tuple((s, a) for s, a in self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self) -> Iterator[tuple[State, str]]:
        return iter(self.steps)

    def position(self, i: int) -> int:
        """Map a (possibly zero or negative) index to a 1-based position."""
        n = len(self.steps)
        if 1 <= i <= n:
            return i
        if i == 0:
            return n
        if -n < i < 0:
            return n + i
        raise IndexError(f"path index {i} out of range for length {n}")

    def __getitem__(self, i: int) -> tuple[State, str]:
        return self.steps[self.position(i) - 1]

    def state(self, i: int) -> State:
        return self[i][0]

    @property
    def states(self) -> tuple[State, ...]:
        return tuple(s for s, _ in self.steps)

    @property
    def actions(self) -> tuple[str, ...]:
        return tuple(a for _, a in self.steps)

    def segment(self, i: int, j: int) -> "Path":
        """Inclusive sub-path from position ``i`` to ``j``."""
        lo, hi = self.position(i), self.position(j)
        return Path(self.steps[lo - 1 : hi])

    def prefix(self, k: int) -> "Path":
        return Path(self.steps[:k])

    def suffix(self, i: int) -> "Path":
        return Path(self.steps[self.position(i) - 1 :])

    @classmethod
    def from_indices(cls, mdp: Mdp, states: Sequence[int], policy_arr: np.ndarray) -> "Path":
        return cls(tuple((mdp.states[int(s)], mdp.actions[int(policy_arr[int(s)])]) for s in states))

    def state_indices(self, mdp: Mdp) -> np.ndarray:
        return np.array([mdp.sidx(s) for s in self.states], dtype=np.intp)


def path_probability(mdp: Mdp, path: Path) -> float:
    """Initial probability times the product of transition probabilities."""
    if len(path) == 0:
        raise ModelError("empty path")
    idx = path.state_indices(mdp)
    acts = [mdp.aidx(a) for a in path.actions]
    prob = float(mdp.init[idx[0]])
    for k in range(len(idx) - 1):
        prob *= float(mdp.trans[idx[k], acts[k], idx[k + 1]])
    return prob


def _check_rows(mdp: Mdp, states: np.ndarray, acts: np.ndarray) -> None:
    ok = mdp.defined[states, acts]
    if not ok.all():
        k = int(np.flatnonzero(~ok)[0])
        raise ModelError(f"no transition row for ({mdp.states[states[k]]!r}, {mdp.actions[acts[k]]!r})")


def simulate_indices(
    mdp: Mdp, policy_arr: np.ndarray, starts: np.ndarray, length: int, rng: np.random.Generator
) -> np.ndarray:
    """Vectorised categorical simulation; returns an (N, length) array of state indices."""
    starts = np.asarray(starts, dtype=np.intp)
    out = np.empty((starts.size, length), dtype=np.intp)
    out[:, 0] = starts
    cdf = np.cumsum(mdp.trans, axis=2)
    n_s = mdp.n_states
    for k in range(1, length):
        s = out[:, k - 1]
        a = policy_arr[s]
        _check_rows(mdp, s, a)
        u = rng.random(s.size)
        rows = cdf[s, a]
        nxt = (rows <= u[:, None] * rows[:, -1:]).sum(axis=1)
        out[:, k] = np.minimum(nxt, n_s - 1)
    return out


def simulate_path(
    mdp: Mdp,
    policy: Policy,
    start: State | None,
    length: int,
    rng: np.random.Generator,
) -> Path:
    """Sample a path of ``length`` steps under ``policy``.

    ``start=None`` draws the first state from the initial distribution.
    """
    if length < 1:
        raise ModelError("length must be positive")
    pol = policy.to_array(mdp)
    if start is None:
        s0 = int(rng.choice(mdp.n_states, p=mdp.init / mdp.init.sum()))
    else:
        s0 = mdp.sidx(start)
    idx = simulate_indices(mdp, pol, np.array([s0]), length, rng)[0]
    return Path.from_indices(mdp, idx, pol)


# grid world -----------------------------------------------------------------


def cell_id(cell: Cell) -> str:
    return f"{cell[0]},{cell[1]}"


def parse_cell(sid: str) -> Cell:
    r, c = sid.split(",")
    return int(r), int(c)


@dataclass(frozen=True)
class GridConfig:
    rows: int = 4
    cols: int = 4
    start: Cell = (0, 0)
    unsafe: frozenset[Cell] = frozenset({(1, 2)})
    target: Cell = (3, 3)
    slip: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "target", tuple(self.target))
        object.__setattr__(self, "unsafe", frozenset(tuple(c) for c in self.unsafe))

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ModelError("grid needs positive dimensions")
        if not 0.0 <= self.slip <= 1.0:
            raise ModelError("slip must lie in [0, 1]")
        for cell in (self.start, self.target, *self.unsafe):
            if not (0 <= cell[0] < self.rows and 0 <= cell[1] < self.cols):
                raise ModelError(f"cell {cell} outside the {self.rows}x{self.cols} grid")
        if self.target in self.unsafe:
            raise ModelError("target cell cannot be unsafe")


def build_gridworld(cfg: GridConfig) -> Mdp:
    """Slippery grid world with absorbing ``target`` and ``unsafe`` cells.

    The chosen move happens with probability ``1 - slip``; each of the three
    other moves with ``slip / 3``. Moves off the grid leave the agent in place.
    Any action taken in the target cell earns reward 1.
    """
    cfg.validate()
    cells = [(r, c) for r in range(cfg.rows) for c in range(cfg.cols)]
    states = [cell_id(c) for c in cells]

    def move(cell, action):
        dr, dc = _MOVES[action]
        r, c = cell[0] + dr, cell[1] + dc
        if 0 <= r < cfg.rows and 0 <= c < cfg.cols:
            return r, c
        return cell

    transitions: dict = {}
    for cell in cells:
        sid = cell_id(cell)
        transitions[sid] = {}
        for a in GRID_ACTIONS:
            if cell == cfg.target or cell in cfg.unsafe:
                transitions[sid][a] = {sid: 1.0}
                continue
            row: dict[str, float] = {}
            for b in GRID_ACTIONS:
                p = 1.0 - cfg.slip if b == a else cfg.slip / 3.0
                if p == 0.0:
                    continue
                dest = cell_id(move(cell, b))
                row[dest] = row.get(dest, 0.0) + p
            transitions[sid][a] = row
    labels = {cell_id(c): {"unsafe"} for c in cfg.unsafe}
    labels[cell_id(cfg.target)] = {"target"}
    rewards = {cell_id(cfg.target): {a: 1.0 for a in GRID_ACTIONS}}
    return Mdp.from_tables(
        states,
        GRID_ACTIONS,
        transitions,
        {cell_id(cfg.start): 1.0},
        rewards,
        labels,
        propositions={"unsafe", "target"},
    )


_ARROW = {"v": "Down", ">": "Right", "^": "Up", "<": "Left", ".": "Down"}

# Grid policies; "." marks label cells (absorbing, action inert).
OPTIMAL_LAYOUT = ("vv>v", "vv.v", "vvvv", ">>>.")
RANDOM_LAYOUT = (">>>v", ">v.v", ">>vv", ">>>.")


def policy_from_layout(layout: Sequence[str]) -> Policy:
    return Policy({cell_id((r, c)): _ARROW[ch] for r, line in enumerate(layout) for c, ch in enumerate(line)})


def grid_policies() -> dict[str, Policy]:
    """The optimal (``opt``) and deliberately less safe (``rand``) grid policies."""
    return {"opt": policy_from_layout(OPTIMAL_LAYOUT), "rand": policy_from_layout(RANDOM_LAYOUT)}


# reach-avoid dynamic programming ---------------------------------------------


def reach_avoid_values(
    mdp: Mdp, target: str, unsafe: str, horizon: int, policy: Policy | None = None
) -> np.ndarray:
    """Probability of ``!unsafe U[0,horizon] target`` from every state.

    With ``policy=None`` the maximum over deterministic policies is returned.
    """
    tgt = mdp.label_mask(target)
    bad = mdp.label_mask(unsafe) & ~tgt
    v = tgt.astype(float)
    pol = None if policy is None else policy.to_array(mdp)
    for _ in range(horizon):
        q = mdp.trans @ v
        q = np.where(mdp.defined, q, -np.inf)
        if pol is None:
            nv = q.max(axis=1)
        else:
            nv = q[np.arange(mdp.n_states), pol]
        v = np.where(tgt, 1.0, np.where(bad, 0.0, nv))
    return v


def value_iteration_reach_avoid(mdp: Mdp, target: str, unsafe: str, horizon: int) -> Policy:
    """Greedy stationary policy for reaching ``target`` within ``horizon`` steps.

    Values come from undiscounted finite-horizon backups with unsafe states
    pinned to 0; the policy is greedy on the ``horizon - 1`` step values, ties
    going to the earliest action in ``mdp.actions``. Label cells get the first
    action named ``Down`` when present.
    """
    if horizon < 1:
        raise ModelError("horizon must be positive")
    if target not in mdp.propositions or unsafe not in mdp.propositions:
        raise ModelError(f"labels {target!r}/{unsafe!r} not declared")
    v = reach_avoid_values(mdp, target, unsafe, horizon - 1)
    q = np.where(mdp.defined, mdp.trans @ v, -np.inf)
    best = q.max(axis=1, keepdims=True)
    choice = np.argmax(q >= best - 1e-12, axis=1)
    inert = mdp.label_mask(target) | mdp.label_mask(unsafe)
    if "Down" in mdp.action_index:
        choice = np.where(inert, mdp.action_index["Down"], choice)
    return Policy.from_array(mdp, choice)


def compose_segment_policy(base: Policy, segments: Sequence[tuple[Policy, Path | Iterable[State]]]) -> Policy:
    """Stationary policy that follows ``segments[k][0]`` on states visited in slice k.

    A slice is a :class:`Path` segment or any iterable of states. Later segments
    take precedence; states in no slice keep ``base``.
    """
    table = dict(base.table)
    for pol, piece in segments:
        for s in piece.states if isinstance(piece, Path) else piece:
            table[s] = pol(s)
    return Policy(table)
