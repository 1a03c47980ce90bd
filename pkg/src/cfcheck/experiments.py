"""Scripted grid-world experiments comparing nominal, counterfactual and interventional arms.

Every repetition simulates ``paths`` observed paths under the behaviour
policy ``rand``, infers ``contexts`` posterior noise realisations per path
and averages the satisfaction of ``!unsafe U[0,T] target`` over the resulting
rollouts. The per-repetition averages form the distribution compared across
arms.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .gumbel import Method, counterfactual_rollouts, rollout, standard_gumbels
from .logic.ast import Atom, Not, Until
from .logic.semantics import atom_leaf, truth_table
from .mdp import Mdp, Policy, simulate_indices

EXPERIMENTS = ("sanity", "cf_offset1", "cf_offset2", "beyond")
N_BINS = 20


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    reps: int = 1000
    paths: int = 100
    contexts: int = 20
    horizon: int = 10
    seed: int = 0
    jobs: int = 1
    method: Method = "exact"

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENTS)}")
        if min(self.reps, self.paths, self.contexts, self.horizon) < 1:
            raise ValueError("reps, paths, contexts and horizon must be positive")


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    values: dict[str, np.ndarray]
    means: dict[str, float] = field(default_factory=dict)
    std_errors: dict[str, float] = field(default_factory=dict)
    ks_statistic: float = float("nan")
    ks_pvalue: float = float("nan")
    histograms: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        for arm, v in self.values.items():
            self.means[arm] = float(v.mean())
            self.std_errors[arm] = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("inf")
            counts, edges = np.histogram(v, bins=N_BINS, range=(0.0, 1.0))
            self.histograms[arm] = {"edges": edges.tolist(), "counts": counts.tolist()}
        a, b = list(self.values.values())[:2]
        res = stats.ks_2samp(a, b)
        self.ks_statistic = float(res.statistic)
        self.ks_pvalue = float(res.pvalue)

    @property
    def arms(self) -> tuple[str, ...]:
        return tuple(self.values)

    def ks_critical(self, alpha: float = 0.05) -> float:
        """Asymptotic two-sample KS critical value for the first two arms."""
        n, m = (v.size for v in list(self.values.values())[:2])
        return float(np.sqrt(-np.log(alpha / 2) * 0.5) * np.sqrt((n + m) / (n * m)))

    def summary(self) -> dict:
        return {
            "experiment": self.config.name,
            "config": asdict(self.config),
            "means": self.means,
            "std_errors": self.std_errors,
            "ks_statistic": self.ks_statistic,
            "ks_pvalue": self.ks_pvalue,
            "histograms": self.histograms,
        }


def reach_avoid_formula(horizon: int):
    return Until(Not(Atom("unsafe")), 0, horizon, Atom("target"))


def _arms(name: str, horizon: int) -> tuple[int, dict[str, tuple[str, int | None]]]:
    """Observed path length and, per arm, (policy name, offset or None for fresh paths)."""
    if name == "sanity":
        return horizon + 1, {"counterfactual": ("opt", -1), "post_interventional": ("opt", None)}
    if name == "cf_offset1":
        return horizon + 1, {"nominal": ("rand", -1), "counterfactual": ("opt", -1)}
    if name == "cf_offset2":
        return horizon + 1, {"nominal": ("rand", -1), "counterfactual": ("opt", -2)}
    # two observed transitions, intervention after the first one
    return 3, {"nominal": ("rand", 1), "counterfactual": ("opt", 1)}


def run_experiment(mdp: Mdp, policies: dict[str, Policy], cfg: ExperimentConfig) -> ExperimentReport:
    length, arms = _arms(cfg.name, cfg.horizon)
    pol = {name: policies[name].to_array(mdp) for name in ("rand", "opt")}
    phi = reach_avoid_formula(cfg.horizon)
    leaf = atom_leaf(mdp)
    start = int(np.flatnonzero(mdp.init)[0]) if np.count_nonzero(mdp.init) == 1 else None
    kids = np.random.default_rng(cfg.seed).spawn(cfg.reps)
    rollout_len = cfg.horizon + 1

    def one(rep: int) -> dict[str, float]:
        rng = kids[rep]
        starts = np.full(cfg.paths, start) if start is not None else rng.choice(mdp.n_states, cfg.paths, p=mdp.init)
        observed = simulate_indices(mdp, pol["rand"], starts, length, rng)
        out = {}
        for arm, (pname, offset) in arms.items():
            if offset is None:
                g = standard_gumbels(rng, (cfg.paths * cfg.contexts, rollout_len - 1, mdp.n_states))
                paths = rollout(mdp, pol[pname], np.repeat(starts, cfg.contexts), g)
            else:
                paths = counterfactual_rollouts(
                    mdp, pol["rand"], observed, offset, pol[pname], rollout_len, cfg.contexts, rng, cfg.method
                ).reshape(-1, rollout_len)
            out[arm] = float(truth_table(phi, paths, leaf)[:, 0].mean())
        return out

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(one, range(cfg.reps)))
    else:
        rows = [one(r) for r in range(cfg.reps)]
    values = {arm: np.array([r[arm] for r in rows]) for arm in arms}
    return ExperimentReport(cfg, values)
