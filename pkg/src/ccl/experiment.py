"""The closed loop: generate, discover, plan, act, and score regret.

Each episode samples a ground-truth SCM, observes it for a warm-up period,
then alternates observational steps with scheduled interventions chosen by
the discovery-plus-planning stack.  A parallel oracle twin, driven by the
same noise draws, takes the truly optimal intervention at every timestep;
the per-step regret is the gap between the twin's and the actual target
value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from . import control, idiscovery, odiscovery
from .control import PlanConfig, Proposal
from .idiscovery import Constraint, ConstraintList
from .odiscovery import DiscoveryConfig
from .scm import Scm, ScmConfig, Series, drop_latents, generate, sample_scm, step_row, warm_up_start
from .stats import GaussianFit, gaussian_percentile

MODES = ("baseline", "extended", "oracle_constraints", "observational_only")


@dataclass(frozen=True)
class EpisodeConfig:
    scm: ScmConfig = ScmConfig()
    t_init: int = 50
    t_max: int = 200
    intervention_fraction: float = 0.25
    eps0: float = 0.5
    decay: float = 0.99
    discovery: DiscoveryConfig = DiscoveryConfig()
    alpha_dep: float = 0.05
    alpha_indep: float = 0.8
    prune_list: str = "deps"
    mode: str = "extended"
    horizon: int = 20
    mag_cap: int = 256
    objective_mode: str = "signed-max"
    discovery_stride: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.intervention_fraction <= 1.0:
            raise ValueError("intervention_fraction must lie in [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.discovery_stride < 1:
            raise ValueError("discovery_stride must be positive")
        if self.t_init < 1 or self.t_max < 0:
            raise ValueError("t_init must be positive and t_max non-negative")


@dataclass(frozen=True)
class StepRecord:
    t: int
    acted: bool
    variable: int | None
    value: float | None
    was_alternative: bool | None
    eps: float
    y_actual: float
    y_oracle: float
    regret_increment: float


@dataclass(frozen=True)
class EpisodeResult:
    records: tuple[StepRecord, ...]
    avg_regret: float
    optimal_fraction: float
    seed: int
    diagnostics: dict = field(default_factory=dict)


def is_action_step(t: int, fraction: float) -> bool:
    """Deterministic schedule; fraction 0.25 acts on every fourth step."""
    return math.floor((t + 1) * fraction) > math.floor(t * fraction)


def true_ancestor(scm: Scm, i: int, j: int, tau: int) -> bool:
    """Ground truth: is V^i_{t-tau} an ancestor of V^j_t (paths may cross latents)?"""
    if tau not in (0, 1):
        raise ValueError("only lags 0 and 1 are modelled")
    n = scm.n_total
    # Nodes (var, slice); slice 0 = t-1, slice 1 = t.  Edges run forward only.
    children: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def add(u: tuple[int, int], v: tuple[int, int]) -> None:
        children.setdefault(u, []).append(v)

    for tgt in range(n):
        if scm.auto[tgt] != 0.0:
            add((tgt, 0), (tgt, 1))
        for mech in scm.cross[tgt]:
            if mech.lag == 0:
                for sl in (0, 1):
                    add((mech.source, sl), (tgt, sl))
            else:
                add((mech.source, 0), (tgt, 1))
    startnode = (i, 1 - tau)
    goal = (j, 1)
    stack = [startnode]
    seen = {startnode}
    while stack:
        node = stack.pop()
        if node == goal:
            return True
        for nxt in children.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return False


def oracle_constraint_list(scm: Scm, tau_max: int) -> ConstraintList:
    """Perfect constraints: the full tested grid, split by true ancestry."""
    deps = []
    indeps = []
    observed = scm.observed_idx
    for tau in range(tau_max + 1):
        for oi, i_full in enumerate(observed):
            for oj, j_full in enumerate(observed):
                if tau == 0 and oi == oj:
                    continue
                if true_ancestor(scm, i_full, j_full, tau):
                    deps.append(Constraint(oj, oi, tau, 0.0))
                else:
                    indeps.append(Constraint(oj, oi, tau, 1.0))
    return ConstraintList(tuple(deps), tuple(indeps))


def stationary_std(scm: Scm) -> np.ndarray:
    """Per-variable stationary standard deviation of the linear process."""
    a0, a1 = scm.lag_matrices
    n = scm.n_total
    solve = np.linalg.inv(np.eye(n) - a0)
    companion = solve @ a1
    innovation = solve @ np.diag(scm.noise_std**2) @ solve.T
    cov = solve_discrete_lyapunov(companion, innovation)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


class _OraclePlanner:
    """Per-step optimal actions on the true SCM with a fixed true-percentile menu."""

    def __init__(self, scm: Scm, horizon: int) -> None:
        self.scm = scm
        self.horizon = horizon
        stds = stationary_std(scm)
        self.grid: list[tuple[int, float]] = []
        for var in scm.observed_idx:
            if var == scm.target:
                continue
            fit = GaussianFit(0.0, float(stds[var]))
            values = sorted({gaussian_percentile(fit, 0.05), gaussian_percentile(fit, 0.95)})
            for value in values:
                self.grid.append((var, value))
        self.noise_free = replace(scm, noise_std=np.zeros(scm.n_total))
        a0, a1 = scm.lag_matrices
        eye = np.eye(scm.n_total)
        self._minv = {}
        self._b1 = {}
        for var, _ in self.grid:
            if var in self._minv:
                continue
            b0 = a0.copy()
            b0[var, :] = 0.0
            b1 = a1.copy()
            b1[var, :] = 0.0
            self._minv[var] = np.linalg.inv(eye - b0)
            self._b1[var] = b1

    def outcomes(self, start_last: np.ndarray, horizon: int | None = None) -> list[float]:
        horizon = horizon or self.horizon
        out = []
        n = self.scm.n_total
        for var, value in self.grid:
            bias = np.zeros(n)
            bias[var] = value
            state = start_last.copy()
            acc = 0.0
            for _ in range(horizon):
                state = self._minv[var] @ (self._b1[var] @ state + bias)
                acc += state[self.scm.target]
            out.append(acc / horizon)
        return out

    def best_action(self, start_last: np.ndarray, horizon: int | None = None) -> tuple[int, float]:
        outcomes = self.outcomes(start_last, horizon)
        best = max(range(len(self.grid)), key=lambda idx: (outcomes[idx], -idx))
        return self.grid[best]


def run_episode(
    cfg: EpisodeConfig,
    rng: np.random.Generator | None = None,
    keep_history: bool = False,
) -> EpisodeResult:
    """One full control episode; bit-reproducible from (cfg, seed).

    With ``keep_history`` the full generated trajectory (values and do-mask,
    all variables including latents) is attached to the diagnostics.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    scm = sample_scm(cfg.scm, rng)
    observed = scm.observed_idx
    target_full = scm.target
    target_obs = observed.index(target_full)
    tau = cfg.discovery.tau_max

    start = warm_up_start(scm, rng)
    history = generate(scm, None, start, cfg.t_init, rng)

    oracle = _OraclePlanner(scm, cfg.horizon)
    # Static per-episode optimum: the steady-state best action variable.
    steady = oracle.best_action(np.zeros(scm.n_total), horizon=200)
    optimal_var_obs = observed.index(steady[0])

    plan_cfg = PlanConfig(
        horizon=cfg.horizon, mag_cap=cfg.mag_cap, objective_mode=cfg.objective_mode
    )
    oracle_cl = (
        oracle_constraint_list(scm, tau) if cfg.mode == "oracle_constraints" else None
    )

    records: list[StepRecord] = []
    prev_actual = history.values[-1].copy() if scm.tau_max else None
    prev_twin = prev_actual.copy() if prev_actual is not None else None
    last_planned_t: int | None = None
    proposal: Proposal | None = None
    n_optimal = 0
    n_acted = 0

    for t in range(cfg.t_max):
        noise_row = rng.standard_normal(scm.n_total) * scm.noise_std
        eps = control.epsilon_at(t, cfg.eps0, cfg.decay)
        acting = is_action_step(t, cfg.intervention_fraction) and cfg.mode != "observational_only"

        interv_actual: tuple[int, float] | None = None
        variable = value = was_alt = None
        if acting:
            if last_planned_t is None or t - last_planned_t >= cfg.discovery_stride:
                measured = drop_latents(history, observed)
                if cfg.mode == "extended":
                    constraints = idiscovery.discover_interventional(
                        measured, tau, cfg.alpha_dep, cfg.alpha_indep, cfg.prune_list
                    )
                elif cfg.mode == "oracle_constraints":
                    constraints = oracle_cl
                else:
                    constraints = ConstraintList()
                pag, _ = odiscovery.discover(measured, constraints, cfg.discovery)
                last_planned_t = t
            else:
                measured = drop_latents(history, observed)
            menu = control.build_menu(measured, target_obs)
            alternatives = {
                var: control.alternative_value(measured, var) for var, _ in menu.entries
            }
            start_rows = measured.values[-max(tau, 1) :]
            proposal = control.find_optimal(
                pag, menu, target_obs, start_rows, plan_cfg, alternatives
            )
            value, was_alt = control.select_value(proposal, eps, rng)
            variable = proposal.variable
            interv_actual = (observed[variable], value)
            n_acted += 1
            if variable == optimal_var_obs:
                n_optimal += 1

        twin_start = prev_twin if prev_twin is not None else np.zeros(scm.n_total)
        interv_twin = oracle.best_action(twin_start)

        actual_row, _ = step_row(scm, prev_actual, noise_row, interv_actual)
        twin_row, _ = step_row(scm, prev_twin, noise_row, interv_twin)
        mask_row = np.zeros(scm.n_total, dtype=bool)
        if interv_actual is not None:
            mask_row[interv_actual[0]] = True
        history = history.appended(Series(actual_row[None, :], mask_row[None, :]))
        prev_actual = actual_row if scm.tau_max else None
        prev_twin = twin_row if scm.tau_max else None

        y_actual = float(actual_row[target_full])
        y_oracle = float(twin_row[target_full])
        records.append(
            StepRecord(
                t=t,
                acted=interv_actual is not None,
                variable=variable,
                value=value,
                was_alternative=was_alt,
                eps=eps,
                y_actual=y_actual,
                y_oracle=y_oracle,
                regret_increment=y_oracle - y_actual,
            )
        )

    avg_regret = float(np.mean([r.regret_increment for r in records])) if records else 0.0
    optimal_fraction = n_optimal / n_acted if n_acted else float("nan")

    diagnostics = {"optimal_variable": optimal_var_obs, "seed": cfg.seed}
    if keep_history:
        diagnostics["history"] = history
        diagnostics["scm"] = scm
    if cfg.mode in ("extended", "oracle_constraints"):
        measured = drop_latents(history, observed)
        if cfg.mode == "extended":
            final_cl = idiscovery.discover_interventional(
                measured, tau, cfg.alpha_dep, cfg.alpha_indep, cfg.prune_list
            )
        else:
            final_cl = oracle_cl
        dep_flags = [
            (c, true_ancestor(scm, observed[c.i], observed[c.j], c.tau))
            for c in final_cl.deps
        ]
        indep_flags = [
            (c, not true_ancestor(scm, observed[c.i], observed[c.j], c.tau))
            for c in final_cl.indeps
        ]
        diagnostics.update(
            dep_total=len(dep_flags),
            dep_correct=sum(ok for _, ok in dep_flags),
            indep_total=len(indep_flags),
            indep_correct=sum(ok for _, ok in indep_flags),
            dep_list=tuple((c.j, c.i, c.tau, c.p, ok) for c, ok in dep_flags),
            indep_list=tuple((c.j, c.i, c.tau, c.p, ok) for c, ok in indep_flags),
        )
    return EpisodeResult(
        records=tuple(records),
        avg_regret=avg_regret,
        optimal_fraction=optimal_fraction,
        seed=cfg.seed,
        diagnostics=diagnostics,
    )


def oracle_outcome(result_records: Sequence[StepRecord], t: int) -> float:
    """Oracle twin target value at step t of a finished episode."""
    return result_records[t].y_oracle


@dataclass(frozen=True)
class AggregateResult:
    episodes: int
    mean_avg_regret: float
    q1: float
    median: float
    q3: float
    min: float
    max: float
    mean_optimal_fraction: float
    per_episode: tuple[tuple[int, int, float, float], ...]  # (index, seed, regret, fraction)


def aggregate(results: Sequence[EpisodeResult]) -> AggregateResult:
    if not results:
        raise ValueError("nothing to aggregate")
    regrets = np.array([r.avg_regret for r in results])
    fractions = np.array([r.optimal_fraction for r in results])
    with np.errstate(invalid="ignore"):
        mean_fraction = float(np.nanmean(fractions)) if not np.isnan(fractions).all() else float("nan")
    q1, med, q3 = np.percentile(regrets, [25.0, 50.0, 75.0])
    return AggregateResult(
        episodes=len(results),
        mean_avg_regret=float(regrets.mean()),
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        min=float(regrets.min()),
        max=float(regrets.max()),
        mean_optimal_fraction=mean_fraction,
        per_episode=tuple(
            (idx, r.seed, r.avg_regret, r.optimal_fraction) for idx, r in enumerate(results)
        ),
    )


def episode_seeds(base_seed: int, episodes: int) -> list[int]:
    """Deterministic per-episode seeds, shared across sweep values for pairing."""
    return [base_seed + idx for idx in range(episodes)]


def run_episodes(cfg: EpisodeConfig, episodes: int, jobs: int = 1) -> list[EpisodeResult]:
    configs = [replace(cfg, seed=s) for s in episode_seeds(cfg.seed, episodes)]
    if jobs <= 1 or len(configs) <= 1:
        return [run_episode(c) for c in configs]
    import multiprocessing as mp

    with mp.get_context("spawn").Pool(processes=jobs) as pool:
        return pool.map(run_episode, configs, chunksize=1)


SWEEPABLE = (
    "intervention_fraction",
    "t_init",
    "n_observed",
    "alpha_obs",
    "alpha_indep",
    "alpha_dep",
    "mode",
)


def apply_sweep_value(base: EpisodeConfig, param: str, raw: str) -> EpisodeConfig:
    if param == "intervention_fraction":
        return replace(base, intervention_fraction=float(raw))
    if param == "t_init":
        return replace(base, t_init=int(raw))
    if param == "n_observed":
        return replace(base, scm=replace(base.scm, n_observed=int(raw)))
    if param == "alpha_obs":
        return replace(base, discovery=replace(base.discovery, alpha_obs=float(raw)))
    if param == "alpha_indep":
        return replace(base, alpha_indep=float(raw))
    if param == "alpha_dep":
        return replace(base, alpha_dep=float(raw))
    if param == "mode":
        return replace(base, mode=raw)
    raise ValueError(f"unknown sweep parameter {param!r}; valid: {', '.join(SWEEPABLE)}")


def sweep(
    base: EpisodeConfig,
    param: str,
    values: Sequence[str],
    episodes: int,
    jobs: int = 1,
) -> list[tuple[str, AggregateResult]]:
    """Aggregate table over the swept values, seeded identically per value."""
    table = []
    for raw in values:
        cfg = apply_sweep_value(base, param, str(raw))
        results = run_episodes(cfg, episodes, jobs)
        table.append((str(raw), aggregate(results)))
    return table
