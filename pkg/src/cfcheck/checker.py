"""Statistical model checking of the causal temporal logic.

All estimators share one sampling routine: draw Gumbel noise for ``n``
rollouts (posterior noise for the part of the rollout that overlaps the
observed path, prior noise elsewhere), roll every requested world forward on
that same noise and reduce each rollout to an indicator or a cumulative
reward. Work is cut into fixed-size chunks, each with its own generator
spawned from the caller's, so results do not depend on ``jobs``.

Nested quantitative sub-formulas inside a path formula are decided once per
distinct prefix (per distinct state when the node ignores history) with fresh
samples, by their point estimate; there is no compositional error budget.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .gumbel import (
    EMPTY,
    CounterfactualModel,
    Intervention,
    Method,
    ScmConfig,
    abduct_batch,
    build_counterfactual_model,
    check_trace,
    rollout,
    standard_gumbels,
)
from .logic.ast import (
    QUERY,
    And,
    Atom,
    Cf,
    Delta,
    Eventually,
    Implies,
    Not,
    Or,
    Prob,
    Quantitative,
    Reward,
    TrueF,
    children,
    expand,
    has_nested_quantitative,
    rollout_horizon,
)
from .logic.semantics import truth_table
from .mdp import Mdp, ModelError, Path, Policy, State
from .stats import (
    Estimate,
    Truth,
    Verdict,
    check_threshold,
    compare,
    exact_estimate,
    proportion_interval,
    sprt,
    t_interval,
    two_sample_interval,
)

CHUNK = 4096


class HorizonError(ValueError):
    pass


class UnknownPolicyError(ModelError):
    pass


@dataclass(frozen=True)
class CheckParams:
    n: int = 1000
    m: int = 20
    alpha: float = 0.05
    seed: int = 0
    jobs: int = 1
    method: Method = "exact"
    interval: str = "clopper_pearson"
    delta_mode: str = "paired"

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.delta_mode not in ("paired", "unpaired"):
            raise ValueError("delta_mode is 'paired' or 'unpaired'")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


Body = Union[Prob, Reward]


def _as_body(stat) -> Body:
    if isinstance(stat, (Prob, Reward)):
        return stat
    if isinstance(stat, tuple) and len(stat) == 2:
        return Reward(QUERY, None, int(stat[0]), int(stat[1]))
    return Prob(QUERY, None, stat)


def _is_exact(body: Body) -> bool:
    """Statistic fixed by the start state alone, no sampling needed."""
    if isinstance(body, Reward):
        return body.hi == 0
    return rollout_horizon(body) == 0 and not has_nested_quantitative(body.path)


def required_horizon(node) -> int:
    """Rollout length (in states) needed by every quantitative node in ``node``."""
    need = 1
    if isinstance(node, Quantitative):
        need = rollout_horizon(node) + 1
        body = node.body if isinstance(node, (Cf, Delta)) else node
        if isinstance(body, Prob):
            need = max(need, required_horizon(body.path))
    for c in children(node):
        need = max(need, required_horizon(c))
    return need


class Checker:
    """Evaluates formulas for one MDP and a registry of named policies."""

    def __init__(self, mdp: Mdp, policies: Mapping[str, Policy] | None = None, params: CheckParams | None = None):
        self.mdp = mdp
        self.policies = dict(policies or {})
        self.params = params or CheckParams()

    # helpers ---------------------------------------------------------------

    def resolve(self, names: Sequence[str]) -> Intervention:
        reps = []
        for name in names:
            if name not in self.policies:
                raise UnknownPolicyError(f"unknown policy {name!r}; registered: {sorted(self.policies)}")
            reps.append((name, self.policies[name]))
        return Intervention(tuple(reps))

    def _map(self, fn, count: int, jobs: int):
        if jobs > 1 and count > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                return list(pool.map(fn, range(count)))
        return [fn(i) for i in range(count)]

    def _statistic(self, body: Body, paths: np.ndarray, policy_arr: np.ndarray, rng) -> np.ndarray:
        if isinstance(body, Reward):
            r = self.mdp.reward[paths, policy_arr[paths]]
            return r[:, body.lo : body.hi + 1].sum(axis=1)
        leaf = _Leaf(self, policy_arr, rng)
        return truth_table(body.path, paths, leaf)[:, 0]

    def sample_values(
        self,
        start: int,
        policy_arrs: Sequence[np.ndarray],
        body: Body,
        n: int,
        rng: np.random.Generator,
        posterior: Optional[np.ndarray] = None,
        jobs: int | None = None,
    ) -> list[np.ndarray]:
        """Per-rollout statistic values for each world, all worlds on shared noise.

        ``posterior`` is ``(m, k, |S|)``: noise for the first ``k`` transitions,
        assigned round-robin over the rollouts.
        """
        length = rollout_horizon(body) + 1
        n_s = self.mdp.n_states
        sizes = [min(CHUNK, n - lo) for lo in range(0, n, CHUNK)]
        offsets = np.cumsum([0] + sizes[:-1])
        kids = rng.spawn(len(sizes))
        k = 0 if posterior is None else min(posterior.shape[1], length - 1)

        def task(i):
            r = kids[i]
            g = standard_gumbels(r, (sizes[i], length - 1, n_s))
            if k:
                which = (offsets[i] + np.arange(sizes[i])) % len(posterior)
                g[:, :k] = posterior[which, :k]
            starts = np.full(sizes[i], start, dtype=np.intp)
            out = []
            for pol in policy_arrs:
                paths = rollout(self.mdp, pol, starts, g)
                out.append(self._statistic(body, paths, pol, r))
            return out

        chunks = self._map(task, len(sizes), self.params.jobs if jobs is None else jobs)
        return [np.concatenate([c[w] for c in chunks]) for w in range(len(policy_arrs))]

    def _summarise(self, body: Body, values: np.ndarray) -> Estimate:
        if isinstance(body, Reward):
            return t_interval(values, self.params.alpha)
        return proportion_interval(values, self.params.alpha, self.params.interval)

    def _exact_value(self, body: Body, start: int, policy_arr: np.ndarray) -> float:
        if isinstance(body, Reward):
            return float(self.mdp.reward[start, policy_arr[start]])
        leaf = _Leaf(self, policy_arr, None)
        return float(truth_table(body.path, np.array([[start]]), leaf)[0, 0])

    def _posterior(self, cf: CounterfactualModel, m: int, rng) -> Optional[np.ndarray]:
        k = cf.n_posterior
        if k == 0:
            return None
        seg = cf.observed[cf.start_pos - 1 : cf.start_pos + k]
        return abduct_batch(self.mdp, cf.base.policy_arr, seg[None, :], m, rng, self.params.method)[0]

    # estimators ------------------------------------------------------------

    def estimate(self, cfg: ScmConfig, start: State, stat, rng=None) -> Estimate:
        """Nominal ``P=?`` or ``R=?`` from ``start`` under ``cfg``."""
        body = _as_body(stat)
        self._check_horizon(cfg, body)
        rng = self.params.rng() if rng is None else rng
        s = self.mdp.sidx(start)
        if _is_exact(body):
            return exact_estimate(self._exact_value(body, s, cfg.policy_arr), self.params.n)
        (vals,) = self.sample_values(s, [cfg.policy_arr], body, self.params.n, rng)
        return self._summarise(body, vals)

    def _check_horizon(self, cfg: ScmConfig, body: Body):
        need = rollout_horizon(body) + 1
        if cfg.horizon < need:
            raise HorizonError(f"rollouts of {need} states needed, model horizon is {cfg.horizon}")

    def counterfactual(
        self, cfg: ScmConfig, path: Path, intervention: Intervention, offset: int, stat, rng=None
    ) -> Estimate:
        """``I@t.P=?`` / ``I@t.R=?`` on the observed ``path``."""
        body = _as_body(stat)
        self._check_horizon(cfg, body)
        rng = self.params.rng() if rng is None else rng
        cf = build_counterfactual_model(cfg, path, offset, intervention, rollout_horizon(body) + 1)
        if _is_exact(body):
            return exact_estimate(self._exact_value(body, cf.start_index, cf.policy_arr), self.params.n)
        n = self.params.n
        post = self._posterior(cf, min(self.params.m, n), rng)
        (vals,) = self.sample_values(cf.start_index, [cf.policy_arr], body, n, rng, post)
        return self._summarise(body, vals)

    def delta(
        self,
        cfg: ScmConfig,
        path: Path,
        treatment: Intervention,
        control: Intervention,
        offset: int,
        stat,
        mode: str | None = None,
        rng=None,
        alpha: float | None = None,
    ) -> Estimate:
        """Causal effect ``I1@t - I0@t`` of a probability or reward query."""
        body = _as_body(stat)
        self._check_horizon(cfg, body)
        rng = self.params.rng() if rng is None else rng
        mode = mode or self.params.delta_mode
        alpha = self.params.alpha if alpha is None else alpha
        length = rollout_horizon(body) + 1
        cf1 = build_counterfactual_model(cfg, path, offset, treatment, length)
        cf0 = build_counterfactual_model(cfg, path, offset, control, length)
        if _is_exact(body):
            v1 = self._exact_value(body, cf1.start_index, cf1.policy_arr)
            v0 = self._exact_value(body, cf0.start_index, cf0.policy_arr)
            return exact_estimate(v1 - v0, self.params.n)
        n = self.params.n
        proportions = isinstance(body, Prob)
        if mode == "paired":
            post = self._posterior(cf1, min(self.params.m, n), rng)
            x1, x0 = self.sample_values(cf1.start_index, [cf1.policy_arr, cf0.policy_arr], body, n, rng, post)
            est = t_interval(x1.astype(float) - x0.astype(float), alpha, "paired_t")
            return est
        post1 = self._posterior(cf1, min(self.params.m, n), rng)
        (x1,) = self.sample_values(cf1.start_index, [cf1.policy_arr], body, n, rng, post1)
        post0 = self._posterior(cf0, min(self.params.m, n), rng)
        (x0,) = self.sample_values(cf0.start_index, [cf0.policy_arr], body, n, rng, post0)
        return two_sample_interval(x1, x0, alpha, proportions)

    def ate_like(
        self,
        cfg: ScmConfig,
        stat,
        treatment: Intervention,
        control: Intervention,
        weights: Mapping[State, float] | np.ndarray,
        rng=None,
    ) -> Estimate:
        """Weighted sum over start states of the ``@0`` causal effect.

        Each per-state interval is built at level ``1 - alpha / k`` (``k``
        states with positive weight), so the weighted bounds hold jointly.
        """
        w = self._weights(weights)
        support = np.flatnonzero(w > 0)
        rng = self.params.rng() if rng is None else rng
        alpha = self.params.alpha / len(support)
        mean = lo = hi = 0.0
        for s in support:
            single = Path(((self.mdp.states[s], cfg.policy(self.mdp.states[s])),))
            est = self.delta(cfg, single, treatment, control, 0, stat, rng=rng, alpha=alpha)
            mean += w[s] * est.mean
            lo += w[s] * est.ci_low
            hi += w[s] * est.ci_high
        return Estimate(mean, lo, hi, self.params.n * len(support), "union_bound")

    def _weights(self, weights) -> np.ndarray:
        if isinstance(weights, Mapping):
            w = np.zeros(self.mdp.n_states)
            for s, p in weights.items():
                w[self.mdp.sidx(s)] = p
        else:
            w = np.asarray(weights, dtype=float)
        if w.shape != (self.mdp.n_states,) or (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be a probability distribution over states")
        return w

    # formulas --------------------------------------------------------------

    def check(self, cfg: ScmConfig, path: Path, node, rng=None) -> Verdict:
        """Three-valued verdict of a state formula on the observed ``path``."""
        idx = path.state_indices(self.mdp)
        acts = np.array([self.mdp.aidx(a) for a in path.actions], dtype=np.intp)
        check_trace(cfg, idx, acts)
        rng = self.params.rng() if rng is None else rng
        return self._check(cfg, path, node, rng)

    def _check(self, cfg: ScmConfig, path: Path, node, rng) -> Verdict:
        if isinstance(node, TrueF):
            return Verdict(Truth.TRUE)
        if isinstance(node, Atom):
            return Verdict(Truth.of(node.name in self.mdp.labels[self.mdp.sidx(path.state(0))]))
        if isinstance(node, Not):
            return Verdict(~self._boolean(cfg, path, node.arg, rng))
        if isinstance(node, And):
            left = self._boolean(cfg, path, node.left, rng)
            if left is Truth.FALSE:
                return Verdict(Truth.FALSE)
            return Verdict(left & self._boolean(cfg, path, node.right, rng))
        if isinstance(node, (Or, Implies)):
            return self._check(cfg, path, expand(node), rng)
        if isinstance(node, Quantitative):
            est, body = self._quantitative(cfg, path, node, rng)
            if body.op == QUERY:
                return Verdict(None, est)
            return check_threshold(est, body.op, body.threshold)
        raise TypeError(f"not a state formula: {node!r}")

    def _boolean(self, cfg, path, node, rng) -> Truth:
        v = self._check(cfg, path, node, rng)
        if v.value is None:
            raise ValueError("a '=?' query cannot be used as a Boolean sub-formula")
        return v.value

    def _quantitative(self, cfg: ScmConfig, path: Path, node, rng) -> tuple[Estimate, Body]:
        cfg = self._fit(cfg, node)
        if isinstance(node, (Prob, Reward)):
            return self.estimate(cfg, path.state(0), node, rng), node
        if isinstance(node, Cf):
            est = self.counterfactual(cfg, path, self.resolve(node.intervention), node.offset, node.body, rng)
            return est, node.body
        est = self.delta(cfg, path, self.resolve(node.treatment), self.resolve(node.control), node.offset, node.body, rng=rng)
        return est, node.body

    def _fit(self, cfg: ScmConfig, node) -> ScmConfig:
        need = required_horizon(node)
        return cfg if cfg.horizon >= need else ScmConfig(cfg.mdp, cfg.policy, need)

    def decide_nested(self, node, prefix: np.ndarray, policy_arr: np.ndarray, rng) -> bool:
        """Boolean value of a quantitative node on a rollout prefix (point-estimate rule)."""
        policy = Policy.from_array(self.mdp, policy_arr)
        path = Path.from_indices(self.mdp, prefix, policy_arr)
        cfg = ScmConfig(self.mdp, policy, required_horizon(node))
        est, body = self._quantitative(cfg, path, node, rng)
        if body.op == QUERY:
            raise ValueError("a '=?' query cannot be used inside a path formula")
        return compare(body.op, est.mean, body.threshold)

    def latest_successful_intervention(
        self, cfg: ScmConfig, path: Path, intervention: Intervention, p: float, bound: int, requirement, rng=None
    ) -> Optional[int]:
        """Smallest offset ``t`` in ``0..|path|-1`` where intervening keeps failure at most ``p``.

        At each ``t`` the implication ``empty@t.P>p(F[0,bound+t] !req) ->
        I@t.P<=p(F[0,bound+t] !req)`` must come out True.
        """
        rng = self.params.rng() if rng is None else rng
        for t in range(len(path)):
            fail = Prob(QUERY, None, Eventually(0, bound + t, Not(requirement)))
            fitted = self._fit(cfg, fail)
            before = check_threshold(self.counterfactual(fitted, path, EMPTY, t, fail, rng), ">", p).value
            after = check_threshold(self.counterfactual(fitted, path, intervention, t, fail, rng), "<=", p).value
            if ~(before & ~after) is Truth.TRUE:
                return t
        return None

    def sprt(self, cfg: ScmConfig, start: State, phi, p: float, delta: float, alpha: float, beta: float, max_samples=1_000_000, rng=None):
        body = _as_body(phi)
        self._check_horizon(cfg, body)
        rng = self.params.rng() if rng is None else rng
        s = self.mdp.sidx(start)

        def draw(k):
            return self.sample_values(s, [cfg.policy_arr], body, k, rng, jobs=1)[0]

        return sprt(draw, p, delta, alpha, beta, max_samples)


class _Leaf:
    """Decides atoms and nested quantitative nodes on every prefix of a batch of rollouts."""

    def __init__(self, checker: Checker, policy_arr: np.ndarray, rng):
        self.checker = checker
        self.policy_arr = policy_arr
        self.rng = rng
        self.cache: dict = {}

    def __call__(self, node, paths: np.ndarray) -> np.ndarray:
        mdp = self.checker.mdp
        if isinstance(node, Atom):
            return mdp.label_mask(node.name)[paths]
        if self.rng is None:
            self.rng = self.checker.params.rng()
        history = isinstance(node, (Cf, Delta)) and node.offset != 0
        n, length = paths.shape
        out = np.zeros((n, length), dtype=bool)
        for i in range(n):
            for k in range(1, length + 1):
                key = (node, tuple(paths[i, :k]) if history else int(paths[i, k - 1]))
                if key not in self.cache:
                    self.cache[key] = self.checker.decide_nested(node, paths[i, :k], self.policy_arr, self.rng)
                out[i, k - 1] = self.cache[key]
        return out


# module-level entry points mirroring the checker methods -------------------------


def estimate_path_prob(model: ScmConfig | CounterfactualModel, start: State | None, phi, params: CheckParams) -> Estimate:
    if isinstance(model, CounterfactualModel):
        return Checker(model.base.mdp, params=params).counterfactual(
            model.base, model.path, model.intervention, model.offset, _as_body(phi)
        )
    return Checker(model.mdp, params=params).estimate(model, start, _as_body(phi))


def estimate_cumulative_reward(model: ScmConfig | CounterfactualModel, start: State | None, interval, params: CheckParams) -> Estimate:
    body = Reward(QUERY, None, int(interval[0]), int(interval[1]))
    if isinstance(model, CounterfactualModel):
        return Checker(model.base.mdp, params=params).counterfactual(model.base, model.path, model.intervention, model.offset, body)
    return Checker(model.mdp, params=params).estimate(model, start, body)


def eval_cf_prob(cfg: ScmConfig, path: Path, intervention: Intervention, offset: int, phi, params: CheckParams) -> Estimate:
    return Checker(cfg.mdp, params=params).counterfactual(cfg, path, intervention, offset, _as_body(phi))


def eval_cf_reward(cfg: ScmConfig, path: Path, intervention: Intervention, offset: int, interval, params: CheckParams) -> Estimate:
    body = Reward(QUERY, None, int(interval[0]), int(interval[1]))
    return Checker(cfg.mdp, params=params).counterfactual(cfg, path, intervention, offset, body)


def eval_delta(cfg, path, treatment, control, offset, stat, params: CheckParams, mode: str | None = None) -> Estimate:
    return Checker(cfg.mdp, params=params).delta(cfg, path, treatment, control, offset, stat, mode)


def eval_ate_like(cfg, stat, treatment, control, weights, params: CheckParams) -> Estimate:
    return Checker(cfg.mdp, params=params).ate_like(cfg, stat, treatment, control, weights)


def check_state_formula(cfg: ScmConfig, path: Path, node, params: CheckParams, policies: Mapping[str, Policy] | None = None) -> Verdict:
    return Checker(cfg.mdp, policies, params).check(cfg, path, node)


def latest_successful_intervention(cfg, path, intervention, p, bound, requirement, params: CheckParams) -> Optional[int]:
    return Checker(cfg.mdp, params=params).latest_successful_intervention(cfg, path, intervention, p, bound, requirement)


def sprt_decide(cfg: ScmConfig, start, phi, p, delta, alpha, beta, params: CheckParams, max_samples: int = 1_000_000) -> bool:
    return Checker(cfg.mdp, params=params).sprt(cfg, start, phi, p, delta, alpha, beta, max_samples).holds
