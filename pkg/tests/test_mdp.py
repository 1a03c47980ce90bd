import numpy as np
import pytest
from helpers import enumerate_paths, exact_path_prob, random_mdp, random_policy
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cfcheck.logic.ast import Atom, Not, Until
from cfcheck.mdp import (
    GridConfig,
    Mdp,
    ModelError,
    Path,
    Policy,
    build_gridworld,
    cell_id,
    compose_segment_policy,
    grid_policies,
    path_probability,
    reach_avoid_values,
    simulate_indices,
    simulate_path,
    validate_mdp,
    value_iteration_reach_avoid,
)


@pytest.fixture(scope="module")
def grid():
    return build_gridworld(GridConfig())


def test_grid_down_from_corner(grid):
    row = grid.trans[grid.sidx("0,0"), grid.aidx("Down")]
    got = {grid.states[k]: row[k] for k in np.flatnonzero(row)}
    # Up and Left bump the walls and stay put
    assert got == pytest.approx({"1,0": 0.9, "0,0": 2 / 30, "0,1": 1 / 30})


def test_grid_interior_row(grid):
    row = grid.trans[grid.sidx("2,1"), grid.aidx("Right")]
    got = {grid.states[k]: row[k] for k in np.flatnonzero(row)}
    assert got == pytest.approx({"2,2": 0.9, "1,1": 1 / 30, "3,1": 1 / 30, "2,0": 1 / 30})


def test_grid_labels_rewards_and_absorption(grid):
    assert grid.labels[grid.sidx("1,2")] == {"unsafe"}
    assert grid.labels[grid.sidx("3,3")] == {"target"}
    for cell in ("1,2", "3,3"):
        s = grid.sidx(cell)
        assert (grid.trans[s, :, s] == 1.0).all()
    assert grid.reward[grid.sidx("3,3")].tolist() == [1.0] * 4
    assert grid.reward.sum() == 4.0
    assert grid.init[grid.sidx("0,0")] == 1.0
    assert validate_mdp(grid) == []


def test_grid_no_slip_is_deterministic():
    mdp = build_gridworld(GridConfig(slip=0.0))
    assert set(np.unique(mdp.trans)) == {0.0, 1.0}


def test_grid_config_errors():
    with pytest.raises(ModelError):
        build_gridworld(GridConfig(target=(4, 4)))
    with pytest.raises(ModelError):
        build_gridworld(GridConfig(slip=1.5))
    with pytest.raises(ModelError):
        build_gridworld(GridConfig(unsafe=frozenset({(3, 3)})))


def _tiny(row=None, init=None, labels=None, props=None):
    return Mdp.from_tables(
        ["x", "y"],
        ["go"],
        {"x": {"go": row or {"x": 0.5, "y": 0.5}}, "y": {"go": {"y": 1.0}}},
        init or {"x": 1.0},
        labels=labels,
        propositions=props,
    )


def test_validate_reports_each_violation():
    assert validate_mdp(_tiny()) == []
    kinds = [v.kind for v in validate_mdp(_tiny(row={"x": 0.5, "y": 0.6}))]
    assert kinds == ["row_sum"]
    kinds = [v.kind for v in validate_mdp(_tiny(row={"x": -0.2, "y": 1.2}))]
    assert kinds == ["range", "range"]
    assert [v.kind for v in validate_mdp(_tiny(init={"x": 0.3}))] == ["init"]
    bad = validate_mdp(_tiny(labels={"x": ["p"]}, props=["q"]))
    assert [(v.kind, v.location) for v in bad] == [("label", ("x", "p"))]


def test_from_tables_rejects_unknown_names():
    with pytest.raises(ModelError):
        Mdp.from_tables(["x"], ["go"], {"x": {"go": {"z": 1.0}}}, {"x": 1.0})
    with pytest.raises(ModelError):
        Mdp.from_tables(["x", "x"], ["go"], {}, {"x": 1.0})


def test_policy_checks(grid):
    with pytest.raises(ModelError):
        Policy({"0,0": "Down"}).to_array(grid)
    with pytest.raises(ModelError):
        Policy({s: "Jump" for s in grid.states}).to_array(grid)
    pol = grid_policies()["opt"]
    assert Policy.from_array(grid, pol.to_array(grid)) == pol


def test_path_indexing():
    p = Path((("a", "u"), ("b", "u"), ("c", "u"), ("d", "u")))
    assert p.state(1) == "a" and p.state(4) == "d"
    assert p.state(0) == "d"
    assert p.state(-1) == "c" and p.state(-3) == "a"
    with pytest.raises(IndexError):
        p.state(5)
    with pytest.raises(IndexError):
        p.state(-4)
    assert p.segment(2, 3).states == ("b", "c")
    assert p.segment(2, 0).states == ("b", "c", "d")
    assert p.prefix(2).states == ("a", "b")
    assert p.suffix(-1).states == ("c", "d")
    with pytest.raises(ModelError):
        Path(())


def test_path_probability(grid):
    p = Path((("0,0", "Down"), ("1,0", "Down"), ("1,0", "Down")))
    assert path_probability(grid, p) == pytest.approx(0.9 * (1 / 30))


def test_simulation_matches_transition_row(grid):
    pol = grid_policies()["rand"].to_array(grid)
    s = grid.sidx("1,1")
    rng = np.random.default_rng(3)
    out = simulate_indices(grid, pol, np.full(50_000, s), 2, rng)[:, 1]
    row = grid.trans[s, pol[s]]
    support = np.flatnonzero(row)
    counts = np.bincount(out, minlength=grid.n_states)
    assert counts[np.setdiff1d(np.arange(grid.n_states), support)].sum() == 0
    assert stats.chisquare(counts[support], row[support] * out.size).pvalue > 0.001


def test_simulate_path_is_seeded(grid):
    pol = grid_policies()["rand"]
    a = simulate_path(grid, pol, None, 8, np.random.default_rng(9))
    b = simulate_path(grid, pol, None, 8, np.random.default_rng(9))
    assert a == b and len(a) == 8 and a.state(1) == "0,0"
    assert all(act == pol(s) for s, act in a)


def test_reach_avoid_dp_matches_enumeration(grid):
    pols = grid_policies()
    phi = Until(Not(Atom("unsafe")), 0, 6, Atom("target"))
    for name in ("opt", "rand"):
        dp = reach_avoid_values(grid, "target", "unsafe", 6, pols[name])
        for cell in ("0,0", "2,2", "1,3"):
            s = grid.sidx(cell)
            assert dp[s] == pytest.approx(exact_path_prob(grid, pols[name], s, phi, 7), abs=1e-12)


def test_optimal_dominates_both_policies(grid):
    best = reach_avoid_values(grid, "target", "unsafe", 10)
    for pol in grid_policies().values():
        assert (reach_avoid_values(grid, "target", "unsafe", 10, pol) <= best + 1e-12).all()


def test_value_iteration_policy(grid):
    pols = grid_policies()
    vi = value_iteration_reach_avoid(grid, "target", "unsafe", 10)
    v_vi = reach_avoid_values(grid, "target", "unsafe", 10, vi)
    start = grid.sidx("0,0")
    assert v_vi[start] >= reach_avoid_values(grid, "target", "unsafe", 10, pols["rand"])[start]
    assert v_vi[start] == pytest.approx(reach_avoid_values(grid, "target", "unsafe", 10)[start], abs=1e-3)
    assert vi("1,2") == "Down" and vi("3,3") == "Down"
    with pytest.raises(ModelError):
        value_iteration_reach_avoid(grid, "target", "unsafe", 0)
    with pytest.raises(ModelError):
        value_iteration_reach_avoid(grid, "goal", "unsafe", 5)


def test_optimal_layout_is_safer_than_random(grid):
    pols = grid_policies()
    v = {n: reach_avoid_values(grid, "target", "unsafe", 10, p)[grid.sidx("0,0")] for n, p in pols.items()}
    assert v["opt"] > v["rand"]


def test_compose_segment_policy(grid):
    pols = grid_policies()
    tr = Path(tuple((cell_id((0, c)), "Right") for c in range(3)))
    mixed = compose_segment_policy(pols["rand"], [(pols["opt"], tr.segment(2, 3)), (pols["rand"], ["0,2"])])
    assert mixed("0,0") == pols["rand"]("0,0")
    assert mixed("0,1") == pols["opt"]("0,1")
    assert mixed("0,2") == pols["rand"]("0,2")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_enumerated_path_probabilities_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng)
    pol = random_policy(mdp, rng)
    assert validate_mdp(mdp) == []
    length = int(rng.integers(1, 5))
    paths = enumerate_paths(mdp, pol, 0, length)
    assert sum(p for _, p in paths) == pytest.approx(1.0)
    seq, p = paths[int(rng.integers(len(paths)))]
    path = Path.from_indices(mdp, seq, pol.to_array(mdp))
    assert path_probability(mdp, path) == pytest.approx(p)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_state_permutation_preserves_reach_avoid(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng)
    pol = random_policy(mdp, rng)
    order = rng.permutation(mdp.n_states)
    perm = mdp.permuted(order)
    v = reach_avoid_values(mdp, "b", "a", 4, pol)
    vp = reach_avoid_values(perm, "b", "a", 4, pol)
    assert np.allclose(vp, v[order])
