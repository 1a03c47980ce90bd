"""Gumbel-max structural causal model of an MDP under a fixed policy.

A context for a path of ``L`` states is an ``(L - 1, |S|)`` array; row ``k``
holds the Gumbel noise that decides the transition out of position ``k + 1``.
The initial state is never abducted, it is fixed by the observation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .mdp import Mdp, ModelError, Path, Policy, State

EPS = np.finfo(float).eps
REJECTION_CAP = 1_000_000

Method = Literal["exact", "rejection"]


class InconsistentTraceError(ModelError):
    """The observed path cannot have been produced by the model."""

    def __init__(self, position: int, reason: str):
        super().__init__(f"inconsistent trace at position {position}: {reason}")
        self.position = position
        self.reason = reason


class AbductionError(RuntimeError):
    pass


def gumbel_from_uniform(u):
    u = np.clip(u, EPS, 1.0 - EPS)
    return -np.log(-np.log(u))


def sample_standard_gumbel(rng: np.random.Generator) -> float:
    return float(gumbel_from_uniform(rng.random()))


def standard_gumbels(rng: np.random.Generator, size) -> np.ndarray:
    return gumbel_from_uniform(rng.random(size))


def _log_probs(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(probs > 0, np.log(np.where(probs > 0, probs, 1.0)), -np.inf)


def gumbel_argmax(probs, g) -> int:
    """Index maximising ``log p + g`` over the support of ``probs``.

    Zero-probability outcomes never win; exact ties go to the lowest index.
    """
    probs = np.asarray(probs, dtype=float)
    if not (probs > 0).any():
        raise ValueError("distribution has empty support")
    return int(np.argmax(_log_probs(probs) + np.asarray(g, dtype=float)))


def argmax_batch(logp: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Row-wise :func:`gumbel_argmax` for precomputed log-probabilities."""
    return np.argmax(logp + g, axis=-1)


# abduction -------------------------------------------------------------------


def _posterior_exact(logp: np.ndarray, observed: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Exact posterior Gumbel noise given that row i's argmax was ``observed[i]``.

    The winning perturbed value is Gumbel(log sum p) = Gumbel(0); every other
    support entry is Gumbel(log p_j) truncated above at that maximum. Entries
    outside the support keep their prior.
    """
    n, k = logp.shape
    rows = np.arange(n)
    g = standard_gumbels(rng, (n, k))
    top = standard_gumbels(rng, n)
    e = rng.exponential(size=(n, k))
    support = np.isfinite(logp)
    with np.errstate(over="ignore", invalid="ignore"):
        trunc = -np.log(np.exp(logp - top[:, None]) + e)
    out = np.where(support, trunc, g)
    out[rows, observed] = top - logp[rows, observed]
    return out


def _posterior_rejection(logp: np.ndarray, observed: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n, k = logp.shape
    out = np.empty((n, k))
    todo = np.arange(n)
    attempts = 0
    while todo.size:
        attempts += 1
        if attempts > REJECTION_CAP:
            raise AbductionError(f"rejection sampling exceeded {REJECTION_CAP} attempts")
        g = standard_gumbels(rng, (todo.size, k))
        hit = argmax_batch(logp[todo], g) == observed[todo]
        out[todo[hit]] = g[hit]
        todo = todo[~hit]
    return out


def abduct_transitions(
    logp: np.ndarray, observed: np.ndarray, rng: np.random.Generator, method: Method = "exact"
) -> np.ndarray:
    """Posterior noise for a batch of observed categorical outcomes.

    ``logp`` is ``(n, |S|)``, ``observed`` the outcome index per row. Every
    returned row reproduces its observed outcome under :func:`argmax_batch`.
    """
    observed = np.asarray(observed, dtype=np.intp)
    if not np.isfinite(logp[np.arange(len(observed)), observed]).all():
        raise InconsistentTraceError(0, "observed outcome has probability zero")
    if method == "rejection":
        return _posterior_rejection(logp, observed, rng)
    if method != "exact":
        raise ValueError(f"unknown abduction method {method!r}")
    out = _posterior_exact(logp, observed, rng)
    # floating-point ties can flip the argmax; redraw those rows
    bad = np.flatnonzero(argmax_batch(logp, out) != observed)
    while bad.size:
        out[bad] = _posterior_exact(logp[bad], observed[bad], rng)
        bad = bad[argmax_batch(logp[bad], out[bad]) != observed[bad]]
    return out


def _step_logp(mdp: Mdp, s, a, s_next) -> tuple[np.ndarray, int]:
    i, j, k = mdp.sidx(s), mdp.aidx(a), mdp.sidx(s_next)
    if not mdp.defined[i, j] or mdp.trans[i, j, k] <= 0:
        raise InconsistentTraceError(0, f"P({s_next!r}|{s!r},{a!r}) = 0")
    return mdp.log_trans[i, j], k


def abduct_step_rejection(mdp: Mdp, s: State, a: str, s_next: State, rng: np.random.Generator) -> np.ndarray:
    """Prior Gumbel vector conditioned on the step ``s --a--> s_next``, by rejection."""
    logp, k = _step_logp(mdp, s, a, s_next)
    return _posterior_rejection(logp[None, :], np.array([k]), rng)[0]


def abduct_step_exact(mdp: Mdp, s: State, a: str, s_next: State, rng: np.random.Generator) -> np.ndarray:
    """Same posterior as :func:`abduct_step_rejection`, sampled directly."""
    logp, k = _step_logp(mdp, s, a, s_next)
    return abduct_transitions(logp[None, :], np.array([k]), rng, "exact")[0]


# model -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScmConfig:
    mdp: Mdp
    policy: Policy
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise ModelError("horizon must be at least 1")
        object.__setattr__(self, "policy_arr", self.policy.to_array(self.mdp))


@dataclass(frozen=True)
class GumbelContext:
    values: np.ndarray  # (steps, |S|)

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise ValueError("Gumbel context must be finite")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Intervention:
    """Ordered policy replacements ``pi <- name``; the last one is in force."""

    replacements: tuple[tuple[str, Policy], ...] = ()

    def apply(self, base: Policy) -> Policy:
        return self.replacements[-1][1] if self.replacements else base

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.replacements)

    @classmethod
    def of(cls, **policies: Policy) -> "Intervention":
        return cls(tuple(policies.items()))


EMPTY = Intervention()


def check_trace(cfg: ScmConfig, idx: np.ndarray, acts: np.ndarray) -> None:
    """Raise :class:`InconsistentTraceError` unless the path is a realisation of ``cfg``."""
    mdp, pol = cfg.mdp, cfg.policy_arr
    for k in range(len(idx)):
        if acts[k] != pol[idx[k]]:
            raise InconsistentTraceError(
                k + 1, f"action {mdp.actions[acts[k]]!r} differs from policy action {mdp.actions[pol[idx[k]]]!r}"
            )
        if k + 1 < len(idx):
            if not mdp.defined[idx[k], acts[k]] or mdp.trans[idx[k], acts[k], idx[k + 1]] <= 0:
                raise InconsistentTraceError(k + 1, "zero-probability transition")


def _trace_arrays(cfg: ScmConfig, path: Path) -> tuple[np.ndarray, np.ndarray]:
    idx = path.state_indices(cfg.mdp)
    acts = np.array([cfg.mdp.aidx(a) for a in path.actions], dtype=np.intp)
    check_trace(cfg, idx, acts)
    return idx, acts


def abduct_batch(
    mdp: Mdp, policy_arr: np.ndarray, paths: np.ndarray, m: int, rng: np.random.Generator, method: Method = "exact"
) -> np.ndarray:
    """Posterior contexts for a batch of consistent paths.

    ``paths`` is ``(B, L)`` state indices; returns ``(B, m, L - 1, |S|)``.
    """
    b, length = paths.shape
    if length < 2:
        return np.empty((b, m, 0, mdp.n_states))
    src = np.repeat(paths[:, None, :-1], m, axis=1).reshape(-1)
    dst = np.repeat(paths[:, None, 1:], m, axis=1).reshape(-1)
    logp = mdp.log_trans[src, policy_arr[src]]
    g = abduct_transitions(logp, dst, rng, method)
    return g.reshape(b, m, length - 1, mdp.n_states)


def abduct_path(cfg: ScmConfig, path: Path, n: int, method: Method, rng: np.random.Generator) -> list[GumbelContext]:
    """``n`` independent posterior contexts for the observed ``path``."""
    idx, _ = _trace_arrays(cfg, path)
    ctx = abduct_batch(cfg.mdp, cfg.policy_arr, idx[None, :], n, rng, method)[0]
    return [GumbelContext(c) for c in ctx]


def rollout(
    mdp: Mdp, policy_arr: np.ndarray, starts: np.ndarray, gumbels: np.ndarray
) -> np.ndarray:
    """Deterministic roll-forward: ``gumbels`` is ``(N, steps, |S|)``; returns ``(N, steps + 1)``."""
    n, steps, _ = gumbels.shape
    out = np.empty((n, steps + 1), dtype=np.intp)
    out[:, 0] = starts
    for k in range(steps):
        s = out[:, k]
        a = policy_arr[s]
        if not mdp.defined[s, a].all():
            raise ModelError("rollout reached an undefined transition row")
        out[:, k + 1] = argmax_batch(mdp.log_trans[s, a], gumbels[:, k])
    return out


def sample_scm_path(
    cfg: ScmConfig,
    context: GumbelContext | np.random.Generator,
    start: State | None = None,
    rng: np.random.Generator | None = None,
) -> Path:
    """Path of length ``cfg.horizon`` produced by the Gumbel-max mechanisms.

    ``context`` is either a fixed :class:`GumbelContext` (fully deterministic) or
    a generator for prior noise. ``start=None`` draws from the initial law.
    """
    mdp = cfg.mdp
    if isinstance(context, GumbelContext):
        g = context.values
        if len(g) < cfg.horizon - 1:
            raise ValueError("context shorter than the horizon")
        g = g[: cfg.horizon - 1]
        gen = rng
    else:
        gen = context
        g = None
    if start is None:
        if gen is None:
            raise ValueError("need a generator to draw the initial state")
        s0 = int(argmax_batch(_log_probs(mdp.init)[None, :], standard_gumbels(gen, (1, mdp.n_states)))[0])
    else:
        s0 = mdp.sidx(start)
    if g is None:
        g = standard_gumbels(gen, (cfg.horizon - 1, mdp.n_states))
    idx = rollout(mdp, cfg.policy_arr, np.array([s0]), g[None])[0]
    return Path.from_indices(mdp, idx, cfg.policy_arr)


# counterfactual models -------------------------------------------------------


def clip_offset(offset: int, length: int) -> int:
    return max(-length + 1, min(length - 1, offset))


def start_position(offset: int, length: int) -> int:
    """1-based position of ``tau[-offset]`` after clipping the offset."""
    t = clip_offset(offset, length)
    return -t if t < 0 else length - t


@dataclass(frozen=True, eq=False)
class CounterfactualModel:
    """Model started at ``tau[-offset]`` with ``intervention`` in force from there on.

    The first ``n_posterior`` transitions of every rollout reuse the posterior
    noise of the matching observed transitions; later ones use prior noise.
    """

    base: ScmConfig
    path: Path
    offset: int
    intervention: Intervention
    horizon: int
    observed: np.ndarray
    start_pos: int
    policy_arr: np.ndarray

    @property
    def start_index(self) -> int:
        return int(self.observed[self.start_pos - 1])

    @property
    def start(self) -> State:
        return self.base.mdp.states[self.start_index]

    @property
    def n_posterior(self) -> int:
        return min(len(self.observed) - self.start_pos, self.horizon - 1)

    @property
    def policy(self) -> Policy:
        return self.intervention.apply(self.base.policy)


def build_counterfactual_model(
    cfg: ScmConfig, path: Path, offset: int, intervention: Intervention, horizon: int
) -> CounterfactualModel:
    if horizon < 1:
        raise ModelError("horizon must be positive")
    idx, _ = _trace_arrays(cfg, path)
    t = clip_offset(offset, len(path))
    pos = start_position(t, len(path))
    pol = intervention.apply(cfg.policy).to_array(cfg.mdp)
    return CounterfactualModel(cfg, path, t, intervention, horizon, idx, pos, pol)


def counterfactual_gumbels(
    cf: CounterfactualModel, n: int, m: int, rng: np.random.Generator, method: Method = "exact"
) -> np.ndarray:
    """``(n, horizon - 1, |S|)`` noise: ``m`` posterior draws shared round-robin, fresh prior after."""
    mdp = cf.base.mdp
    k = cf.n_posterior
    if k > 0:
        segment = cf.observed[cf.start_pos - 1 : cf.start_pos + k]
        post = abduct_batch(mdp, cf.base.policy_arr, segment[None, :], min(m, n), rng, method)[0]
    prior = standard_gumbels(rng, (n, cf.horizon - 1, mdp.n_states))
    if k > 0:
        prior[:, :k] = post[np.arange(n) % len(post)]
    return prior


def sample_counterfactual_batch(
    cf: CounterfactualModel, n: int, m: int, rng: np.random.Generator, method: Method = "exact"
) -> np.ndarray:
    g = counterfactual_gumbels(cf, n, m, rng, method)
    return rollout(cf.base.mdp, cf.policy_arr, np.full(n, cf.start_index), g)


def sample_counterfactual_path(cf: CounterfactualModel, rng: np.random.Generator, method: Method = "exact") -> Path:
    """One counterfactual rollout of length ``cf.horizon`` starting at ``cf.start``."""
    idx = sample_counterfactual_batch(cf, 1, 1, rng, method)[0]
    return Path.from_indices(cf.base.mdp, idx, cf.policy_arr)


def paths_to_indices(mdp: Mdp, paths: Sequence[Path]) -> np.ndarray:
    return np.array([p.state_indices(mdp) for p in paths], dtype=np.intp)


def counterfactual_rollouts(
    mdp: Mdp,
    base_arr: np.ndarray,
    paths: np.ndarray,
    offset: int,
    policy_arr: np.ndarray,
    horizon: int,
    m: int,
    rng: np.random.Generator,
    method: Method = "exact",
) -> np.ndarray:
    """``m`` counterfactual rollouts for each of a batch of observed paths.

    ``paths`` is ``(B, L)`` state indices already known to be consistent with
    ``base_arr``. Returns ``(B, m, horizon)``.
    """
    b, length = paths.shape
    pos = start_position(offset, length)
    k = min(length - pos, horizon - 1)
    g = standard_gumbels(rng, (b, m, horizon - 1, mdp.n_states))
    if k > 0:
        g[:, :, :k] = abduct_batch(mdp, base_arr, paths[:, pos - 1 : pos + k], m, rng, method)
    starts = np.repeat(paths[:, pos - 1], m)
    out = rollout(mdp, policy_arr, starts, g.reshape(b * m, horizon - 1, mdp.n_states))
    return out.reshape(b, m, horizon)
