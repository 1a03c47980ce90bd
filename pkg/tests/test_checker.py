import numpy as np
import pytest
from helpers import exact_path_prob, exact_reward, random_mdp, random_policy
from hypothesis import given, settings
from hypothesis import strategies as st

from cfcheck.checker import (
    Checker,
    CheckParams,
    HorizonError,
    UnknownPolicyError,
    check_state_formula,
    estimate_cumulative_reward,
    estimate_path_prob,
    eval_ate_like,
    eval_cf_prob,
    eval_cf_reward,
    eval_delta,
    latest_successful_intervention,
    sprt_decide,
)
from cfcheck.gumbel import EMPTY, InconsistentTraceError, Intervention, ScmConfig, build_counterfactual_model
from cfcheck.logic.ast import Atom, Eventually, Not, Prob, TrueF, Until
from cfcheck.logic.parser import parse_formula
from cfcheck.mdp import GridConfig, Mdp, Path, build_gridworld, grid_policies, reach_avoid_values, simulate_indices
from cfcheck.stats import Truth

REACH = Until(Not(Atom("unsafe")), 0, 10, Atom("target"))


@pytest.fixture(scope="module")
def grid():
    return build_gridworld(GridConfig()), grid_policies()


def _trace(mdp, pol, length, seed):
    arr = pol.to_array(mdp)
    idx = simulate_indices(mdp, arr, np.array([0]), length, np.random.default_rng(seed))[0]
    return Path.from_indices(mdp, idx, arr)


def _trace_where(mdp, pol, length, pred):
    for seed in range(10_000):
        tr = _trace(mdp, pol, length, seed)
        if pred(tr):
            return tr
    raise AssertionError("no trace found")


def test_true_formula_is_certain(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["rand"], 11)
    est = estimate_path_prob(cfg, "0,0", Eventually(0, 10, TrueF()), CheckParams(n=500))
    assert est.mean == 1.0 and est.ci_high == 1.0


def test_three_state_coverage_against_enumeration():
    mdp = Mdp.from_tables(
        ["a", "b", "c"],
        ["go"],
        {"a": {"go": {"a": 0.5, "b": 0.3, "c": 0.2}}, "b": {"go": {"a": 0.4, "c": 0.6}}, "c": {"go": {"c": 1.0}}},
        {"a": 1.0},
        labels={"c": ["done"], "b": ["mid"]},
        propositions=["done", "mid"],
    )
    pol = random_policy(mdp, np.random.default_rng(0))
    phi = Until(Not(Atom("mid")), 0, 3, Atom("done"))
    truth = exact_path_prob(mdp, pol, 0, phi, 4)
    cfg = ScmConfig(mdp, pol, 4)
    covered = sum(
        est.ci_low <= truth <= est.ci_high
        for est in (estimate_path_prob(cfg, "a", phi, CheckParams(n=1000, seed=s)) for s in range(100))
    )
    assert covered >= 93


def test_grid_estimate_contains_dp_value(grid):
    mdp, pols = grid
    for name in ("opt", "rand"):
        truth = reach_avoid_values(mdp, "target", "unsafe", 10, pols[name])[mdp.sidx("0,0")]
        est = estimate_path_prob(ScmConfig(mdp, pols[name], 11), "0,0", REACH, CheckParams(n=20_000, seed=3))
        assert est.ci_low <= truth <= est.ci_high


def test_rewards(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["opt"], 11)
    assert estimate_cumulative_reward(cfg, "0,0", (0, 1), CheckParams(n=200)).mean == 0.0
    at_target = estimate_cumulative_reward(cfg, "3,3", (0, 3), CheckParams(n=200))
    assert at_target.mean == 4.0 and at_target.ci == (4.0, 4.0)
    single = estimate_cumulative_reward(cfg, "3,3", (0, 0), CheckParams(n=200))
    assert single.method == "exact" and single.mean == 1.0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_reward_estimate_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states=3)
    pol = random_policy(mdp, rng)
    truth = exact_reward(mdp, pol, 0, 1, 3)
    est = estimate_cumulative_reward(ScmConfig(mdp, pol, 4), "s0", (1, 3), CheckParams(n=4000, seed=seed % 1000, alpha=0.001))
    assert est.ci_low - 1e-9 <= truth <= est.ci_high + 1e-9


def test_horizon_error(grid):
    mdp, pols = grid
    with pytest.raises(HorizonError):
        estimate_path_prob(ScmConfig(mdp, pols["opt"], 3), "0,0", REACH, CheckParams(n=10))


def test_empty_intervention_inside_trace_is_deterministic(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["rand"], 11)
    tr = _trace(mdp, pols["rand"], 11, 5)
    est = eval_cf_prob(cfg, tr, EMPTY, 5, Eventually(0, 4, Atom("target")), CheckParams(n=300, m=10))
    assert est.mean in (0.0, 1.0)


def test_intervention_beats_nominal_on_grid(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["rand"], 11)
    params = CheckParams(n=4000, m=20, seed=2)
    tr = _trace(mdp, pols["rand"], 11, 11)
    nominal = eval_cf_prob(cfg, tr.prefix(1), EMPTY, -1, REACH, params)
    cf = eval_cf_prob(cfg, tr.prefix(1), Intervention.of(pi=pols["opt"]), -1, REACH, params)
    assert cf.mean > nominal.mean


def test_cf_reward_identity_on_trace(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["opt"], 11)
    tr = _trace_where(mdp, pols["opt"], 11, lambda t: t.state(0) == "3,3")
    arr = pols["opt"].to_array(mdp)
    idx = tr.state_indices(mdp)
    observed = float(mdp.reward[idx, arr[idx]].sum())
    est = eval_cf_reward(cfg, tr, EMPTY, -1, (0, 10), CheckParams(n=100, m=5))
    assert est.mean == observed and est.ci == (observed, observed)


def test_delta_modes_agree(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["rand"], 11)
    tr = _trace(mdp, pols["rand"], 11, 21)
    opt = Intervention.of(pi=pols["opt"])
    paired = eval_delta(cfg, tr, opt, EMPTY, -2, REACH, CheckParams(n=5000, seed=1), "paired")
    unpaired = eval_delta(cfg, tr, opt, EMPTY, -2, REACH, CheckParams(n=5000, seed=1), "unpaired")
    assert paired.method == "paired_t"
    assert abs(paired.mean - unpaired.mean) < 0.05
    assert paired.width <= unpaired.width + 1e-9


def test_delta_at_start_is_positive(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["rand"], 11)
    start = Path((("0,0", pols["rand"]("0,0")),))
    est = eval_delta(cfg, start, Intervention.of(pi=pols["opt"]), EMPTY, 0, REACH, CheckParams(n=5000))
    assert est.ci_low > 0


def test_ate_like_point_mass_equals_delta(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["rand"], 11)
    opt = Intervention.of(pi=pols["opt"])
    params = CheckParams(n=2000, seed=4)
    ate = eval_ate_like(cfg, REACH, opt, EMPTY, {"0,0": 1.0}, params)
    start = Path((("0,0", pols["rand"]("0,0")),))
    d = eval_delta(cfg, start, opt, EMPTY, 0, REACH, params)
    assert ate.mean == pytest.approx(d.mean) and ate.ci == pytest.approx(d.ci)
    spread = eval_ate_like(cfg, REACH, opt, EMPTY, {"0,0": 0.5, "2,2": 0.5}, params)
    assert spread.method == "union_bound" and spread.ci_low <= spread.mean <= spread.ci_high
    with pytest.raises(ValueError):
        eval_ate_like(cfg, REACH, opt, EMPTY, {"0,0": 0.4}, params)


def test_target_trace_holds(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["opt"], 11)
    tr = _trace_where(mdp, pols["opt"], 11, lambda t: t.state(0) == "3,3")
    v = check_state_formula(cfg, tr, parse_formula('"target" & P>=0.99 [G[0,5] "target"]'), CheckParams(n=500))
    assert v.value is Truth.TRUE


def test_failure_explanation_formula_runs(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["rand"], 11)
    tr = _trace_where(mdp, pols["rand"], 11, lambda t: t.state(0) == "1,2")
    node = parse_formula('P>=1 ["unsafe"] -> D[pi<-opt,empty]@-1 . P<0 [F[0,10] "unsafe"]')
    v = check_state_formula(cfg, tr, node, CheckParams(n=2000), pols)
    assert v.value is not None
    # the premise holds exactly, so the verdict is that of the causal effect
    delta = check_state_formula(cfg, tr, parse_formula('D[pi<-opt,empty]@-1 . P<0 [F[0,10] "unsafe"]'), CheckParams(n=2000), pols)
    assert v.value is delta.value


def test_decisive_at_large_n(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["opt"], 11)
    start = Path((("0,0", pols["opt"]("0,0")),))
    v = check_state_formula(cfg, start, Prob(">=", 0.5, REACH), CheckParams(n=10_000))
    assert v.value is Truth.TRUE
    v = check_state_formula(cfg, start, Prob("<", 0.5, REACH), CheckParams(n=10_000))
    assert v.value is Truth.FALSE


def test_query_returns_estimate(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["rand"], 11)
    tr = _trace(mdp, pols["rand"], 11, 2)
    v = check_state_formula(cfg, tr, parse_formula('[pi<-opt]@-1 . P=? [F[0,10] "target"]'), CheckParams(n=500), pols)
    assert v.value is None and 0 <= v.estimate.ci_low <= v.estimate.mean <= v.estimate.ci_high <= 1
    with pytest.raises(ValueError):
        check_state_formula(cfg, tr, parse_formula('!P=? [F[0,2] "target"]'), CheckParams(n=50), pols)


def test_latest_successful_intervention(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["rand"], 11)
    safe = _trace_where(mdp, pols["rand"], 11, lambda t: t.state(0) == "3,3")
    opt = Intervention.of(pi=pols["opt"])
    req = Not(Atom("unsafe"))
    # failure is impossible from the target, so the premise fails at t = 0
    assert latest_successful_intervention(cfg, safe, opt, 0.1, 3, req, CheckParams(n=300)) == 0
    burnt = _trace_where(mdp, pols["rand"], 11, lambda t: t.state(0) == "1,2")
    t = latest_successful_intervention(cfg, burnt, EMPTY, 0.0, 3, req, CheckParams(n=300))
    assert t is None


def test_sprt_on_grid(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["opt"], 11)
    assert sprt_decide(cfg, "0,0", REACH, 0.5, 0.1, 0.01, 0.01, CheckParams())
    assert not sprt_decide(cfg, "1,2", REACH, 0.5, 0.1, 0.01, 0.01, CheckParams())


def test_results_invariant_to_jobs(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["rand"], 11)
    tr = _trace(mdp, pols["rand"], 11, 9)
    opt = Intervention.of(pi=pols["opt"])
    a = eval_cf_prob(cfg, tr, opt, -2, REACH, CheckParams(n=10_000, jobs=1, seed=5))
    b = eval_cf_prob(cfg, tr, opt, -2, REACH, CheckParams(n=10_000, jobs=4, seed=5))
    assert a == b


def test_counterfactual_model_entry_point(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["rand"], 11)
    tr = _trace(mdp, pols["rand"], 11, 9)
    opt = Intervention.of(pi=pols["opt"])
    cf = build_counterfactual_model(cfg, tr, -2, opt, 11)
    params = CheckParams(n=500, seed=6)
    assert estimate_path_prob(cf, None, REACH, params) == eval_cf_prob(cfg, tr, opt, -2, REACH, params)


def test_nested_formula(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["opt"], 11)
    start = Path((("0,0", pols["opt"]("0,0")),))
    node = parse_formula('P>0.5 [ G[0,2] P>0.5 [ F[0,8] "target" ] ]')
    assert check_state_formula(cfg, start, node, CheckParams(n=200)).value is Truth.TRUE
    nested_query = parse_formula('P>0.5 [ G[0,2] P=? [ F[0,3] "target" ] ]')
    with pytest.raises(ValueError):
        check_state_formula(cfg, start, nested_query, CheckParams(n=20))


def test_unknown_policy_and_inconsistent_trace(grid):
    mdp, pols = grid
    cfg = ScmConfig(mdp, pols["opt"], 11)
    start = Path((("0,0", pols["opt"]("0,0")),))
    with pytest.raises(UnknownPolicyError) as e:
        check_state_formula(cfg, start, parse_formula('[pi<-nope]@0 . P=? [F[0,2] "target"]'), CheckParams(n=20), pols)
    assert "opt" in str(e.value)
    bad = Path((("0,0", "Down"), ("3,3", "Down")))
    with pytest.raises(InconsistentTraceError):
        check_state_formula(cfg, bad, TrueF(), CheckParams(n=20))


def test_params_validation():
    with pytest.raises(ValueError):
        CheckParams(n=0)
    with pytest.raises(ValueError):
        CheckParams(alpha=1.0)
    with pytest.raises(ValueError):
        CheckParams(delta_mode="both")
    assert Checker(build_gridworld(GridConfig())).params == CheckParams()
