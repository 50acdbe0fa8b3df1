"""Intervention planning through the equivalence class of discovered graphs.

Every MAG compatible with the discovered PAG is translated into a noise-free
linear SCM whose coefficients are the recorded effect sizes.  Candidate
interventions (the 5th/95th percentile of each non-target variable's fitted
Gaussian) are simulated through every such SCM, and the proposal follows the
most optimistic model.  An epsilon-greedy switch occasionally substitutes the
alternative (median) intervention value for exploration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .graph import ARROW, CIRCLE, TAIL, GraphError, Mag, TsPag, enumerate_mags
from .scm import Mechanism, Scm, Series, generate
from .stats import GaussianFit, fit_gaussian, gaussian_percentile


class PlanningError(ValueError):
    pass


@dataclass(frozen=True)
class InterventionMenu:
    """Candidate (variable, values) pairs; the target is never an entry."""

    entries: tuple[tuple[int, tuple[float, ...]], ...]

    def variables(self) -> list[int]:
        return [var for var, _ in self.entries]


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 20
    mag_cap: int = 256
    objective_mode: str = "signed-max"  # or "magnitude" for the |O| comparison

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise PlanningError("horizon must be at least 1")
        if self.objective_mode not in ("signed-max", "magnitude"):
            raise PlanningError(f"unknown objective_mode {self.objective_mode!r}")


@dataclass(frozen=True)
class Proposal:
    variable: int
    value_opt: float
    value_alt: float
    expected_outcome: float
    source_mag: int
    mag_truncated: bool = False


def build_menu(data: Series, target: int) -> InterventionMenu:
    """Menu of boundary intervention values from per-variable Gaussian fits.

    Candidates are the 5th and 95th percentile of the Gaussian fitted to
    each non-target column; with linear mechanisms the optimum lies on such
    a boundary.  A constant column contributes its single value.
    """
    entries = []
    for var in range(data.n_vars):
        if var == target:
            continue
        fit = fit_gaussian(data.values[:, var])
        if fit.sigma == 0.0:
            values: tuple[float, ...] = (fit.mu,)
        else:
            values = (gaussian_percentile(fit, 0.05), gaussian_percentile(fit, 0.95))
        entries.append((var, values))
    return InterventionMenu(tuple(entries))


def alternative_value(data: Series, variable: int) -> float:
    """Median (50th percentile) of the fitted Gaussian for the column."""
    return gaussian_percentile(fit_gaussian(data.values[:, variable]), 0.5)


def reconstruct_scm(mag: Mag, target: int) -> Scm:
    """Translate a MAG with effect sizes into a noise-free linear SCM.

    Directed links become linear mechanisms with the recorded effect size as
    coefficient (lag-1 self links become auto-coefficients); bidirected links
    represent latent confounding only and contribute no mechanism.
    """
    n = mag.n_vars
    auto = np.zeros(n)
    cross: list[list[Mechanism]] = [[] for _ in range(n)]
    for link in mag.links:
        if link.from_mark is CIRCLE or link.to_mark is CIRCLE:
            raise GraphError(f"circle mark at {link.key}; not a MAG")
        if link.from_mark is ARROW and link.to_mark is ARROW:
            continue  # confounding only
        if link.from_mark is TAIL and link.to_mark is TAIL:
            raise GraphError(f"tail-tail link {link.key} is not reconstructible")
        if link.from_mark is TAIL:
            source, lag, dest = link.from_var, link.lag, link.to_var
        else:
            if link.lag > 0:
                raise GraphError(f"lagged link {link.key} directed against time")
            source, lag, dest = link.to_var, 0, link.from_var
        if link.effect is None:
            raise PlanningError(f"directed link {link.key} is missing an effect size")
        if link.effect == 0.0:
            continue  # a zero coefficient is no mechanism
        if lag == 1 and source == dest:
            auto[dest] = link.effect
        else:
            cross[dest].append(Mechanism(source=source, lag=lag, coeff=link.effect))
    return Scm(
        n_total=n,
        auto=auto,
        cross=tuple(tuple(m) for m in cross),
        noise_std=np.zeros(n),
        observed_idx=tuple(range(n)),
        target=target,
    )


def simulate_outcome(
    scm: Scm,
    do: tuple[int, float],
    start: np.ndarray | None,
    horizon: int,
) -> float:
    """Mean of the target column over a noise-free run intervened at every step.

    When no recent measurements are supplied the outcome is averaged over
    ten seeded standard-normal initializations instead.
    """
    if horizon < 1:
        raise PlanningError("horizon must be at least 1")
    zero_noise = scm if not np.any(scm.noise_std > 0) else replace(
        scm, noise_std=np.zeros(scm.n_total)
    )
    if start is not None:
        rows = np.asarray(start, dtype=float).reshape(-1, scm.n_total)
        use = rows[len(rows) - zero_noise.tau_max :]
        series = generate(zero_noise, do, use, horizon, None)
        return float(series.values[:, scm.target].mean())
    total = 0.0
    for restart in range(10):
        rng = np.random.default_rng(restart)
        rows = rng.standard_normal((zero_noise.tau_max, scm.n_total))
        series = generate(zero_noise, do, rows, horizon, None)
        total += float(series.values[:, scm.target].mean())
    return total / 10.0


def _stacked_outcomes(
    scms: Sequence[Scm],
    grid: Sequence[tuple[int, float]],
    target: int,
    start_last: np.ndarray,
    horizon: int,
) -> np.ndarray:
    """Outcome matrix (n_scms, n_grid) of the grid simulated through every SCM.

    Row-clamped linear solve of the contemporaneous system; equivalent to
    running the generator with the intervention applied at every step.
    """
    m = len(scms)
    n = scms[0].n_total
    a0 = np.stack([s.lag_matrices[0] for s in scms])
    a1 = np.stack([s.lag_matrices[1] for s in scms])
    eye = np.eye(n)
    outcomes = np.empty((m, len(grid)))
    inv_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for gidx, (var, value) in enumerate(grid):
        cached = inv_cache.get(var)
        if cached is None:
            b0 = a0.copy()
            b0[:, var, :] = 0.0
            b1 = a1.copy()
            b1[:, var, :] = 0.0
            minv = np.linalg.inv(eye[None, :, :] - b0)
            cached = (minv, b1)
            inv_cache[var] = cached
        minv, b1 = cached
        bias = np.zeros(n)
        bias[var] = value
        state = np.broadcast_to(start_last, (m, n)).copy()
        acc = np.zeros(m)
        for _ in range(horizon):
            state = np.einsum(
                "mij,mj->mi", minv, np.einsum("mij,mj->mi", b1, state) + bias
            )
            acc += state[:, target]
        outcomes[:, gidx] = acc / horizon
    return outcomes


def find_optimal(
    pag: TsPag,
    menu: InterventionMenu,
    target: int,
    start: np.ndarray | None,
    cfg: PlanConfig,
    alternatives: Mapping[int, float] | None = None,
) -> Proposal:
    """Most optimistic intervention over the MAG x menu x value grid.

    Under the default signed objective the proposal maximizes the simulated
    average outcome; the ``magnitude`` mode compares absolute outcomes
    instead.  Exact ties fall to the lower variable index, then the lower
    value, then the lower MAG index.
    """
    if not menu.entries:
        raise PlanningError("intervention menu is empty")
    mags, truncated = enumerate_mags(pag, cfg.mag_cap)
    if not mags:
        raise PlanningError("PAG admits no valid MAG completion")
    scms = [reconstruct_scm(mag, target) for mag in mags]
    grid: list[tuple[int, float]] = []
    for var, values in sorted(menu.entries):
        for value in sorted(values):
            grid.append((var, value))
    if start is not None and len(np.atleast_2d(start)) > 0:
        rows = np.asarray(start, dtype=float).reshape(-1, scms[0].n_total)
        start_last = rows[-1] if rows.shape[0] else np.zeros(scms[0].n_total)
    else:
        start_last = np.zeros(scms[0].n_total)
    outcomes = _stacked_outcomes(scms, grid, target, start_last, cfg.horizon)

    signed = cfg.objective_mode == "signed-max"
    best: tuple[float, int, int] | None = None  # (score, grid index, mag index)
    for gidx in range(len(grid)):
        for mag_idx in range(len(scms)):
            outcome = float(outcomes[mag_idx, gidx])
            score = outcome if signed else abs(outcome)
            if best is None or score > best[0]:
                best = (score, gidx, mag_idx)
    assert best is not None
    _, gidx, mag_idx = best
    var, value = grid[gidx]
    alt = float(alternatives[var]) if alternatives is not None else float("nan")
    return Proposal(
        variable=var,
        value_opt=value,
        value_alt=alt,
        expected_outcome=float(outcomes[mag_idx, gidx]),
        source_mag=mag_idx,
        mag_truncated=truncated,
    )


def epsilon_at(step: int, eps0: float = 0.5, decay: float = 0.99) -> float:
    """Exploration probability eps0 * decay**step."""
    if not 0.0 <= eps0 <= 1.0:
        raise PlanningError("eps0 must lie in [0, 1]")
    if not 0.0 < decay <= 1.0:
        raise PlanningError("decay must lie in (0, 1]")
    return eps0 * decay**step


def select_value(
    proposal: Proposal, eps: float, rng: np.random.Generator
) -> tuple[float, bool]:
    """Optimistic value with probability 1-eps, else the alternative."""
    if not 0.0 <= eps <= 1.0:
        raise PlanningError("eps must lie in [0, 1]")
    take_alternative = bool(rng.random() < eps)
    return (proposal.value_alt if take_alternative else proposal.value_opt, take_alternative)
