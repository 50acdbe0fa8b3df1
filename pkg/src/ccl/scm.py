"""Linear time-series structural causal models: sampling and data generation.

An SCM holds, per variable, an autoregressive coefficient on its own previous
value, a list of linear cross-mechanisms (lag 0 or 1), and a noise scale.
Hard interventions clamp a variable to a value at every generated step,
severing all of its incoming mechanisms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import IO, Sequence

import numpy as np

from .graph import topological_order


class ScmError(ValueError):
    pass


class UnsatisfiableConfigError(ScmError):
    """Raised when no SCM satisfying the sampling rules exists within the attempt cap."""


@dataclass(frozen=True)
class Mechanism:
    """Linear cross-dependency: ``coeff * V^{source}_{t-lag}`` feeding a target."""

    source: int
    lag: int
    coeff: float

    def __post_init__(self) -> None:
        if self.coeff == 0.0:
            raise ScmError("mechanism coefficient must be non-zero")
        if self.lag not in (0, 1):
            raise ScmError("mechanism lag must be 0 or 1")


@dataclass(frozen=True)
class Scm:
    """A linear SCM over ``n_total`` variables, of which a subset is observed."""

    n_total: int
    auto: np.ndarray  # (n_total,) coefficient on own lag-1 value
    cross: tuple[tuple[Mechanism, ...], ...]  # cross[j] feeds variable j
    noise_std: np.ndarray  # (n_total,) noise standard deviations
    observed_idx: tuple[int, ...]
    target: int

    def __post_init__(self) -> None:
        if len(self.cross) != self.n_total:
            raise ScmError("cross must list mechanisms for every variable")
        if self.auto.shape != (self.n_total,) or self.noise_std.shape != (self.n_total,):
            raise ScmError("auto and noise_std must have one entry per variable")
        if np.any(self.noise_std < 0):
            raise ScmError("noise standard deviations must be non-negative")
        if list(self.observed_idx) != sorted(set(self.observed_idx)):
            raise ScmError("observed_idx must be sorted and unique")
        for j, mechs in enumerate(self.cross):
            for mech in mechs:
                if mech.lag == 0 and mech.source == j:
                    raise ScmError("contemporaneous self-mechanisms are not allowed")
        if self.contemporaneous_order is None:
            raise ScmError("contemporaneous mechanism graph is cyclic")

    @cached_property
    def tau_max(self) -> int:
        if np.any(self.auto != 0) or any(
            m.lag == 1 for mechs in self.cross for m in mechs
        ):
            return 1
        return 0

    @cached_property
    def contemporaneous_order(self) -> list[int] | None:
        edges = [
            (m.source, j) for j, mechs in enumerate(self.cross) for m in mechs if m.lag == 0
        ]
        return topological_order(self.n_total, edges)

    @cached_property
    def lag_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """(A0, A1) with A0[j, i] the contemporaneous and A1[j, i] the lag-1 weight of i on j."""
        a0 = np.zeros((self.n_total, self.n_total))
        a1 = np.diag(self.auto).astype(float)
        for j, mechs in enumerate(self.cross):
            for m in mechs:
                if m.lag == 0:
                    a0[j, m.source] += m.coeff
                else:
                    a1[j, m.source] += m.coeff
        return a0, a1

    def to_json(self, fp: IO[str] | None = None) -> str:
        payload = {
            "n_total": self.n_total,
            "auto": [float(a) for a in self.auto],
            "cross": [
                {"source": m.source, "target": j, "lag": m.lag, "coeff": m.coeff}
                for j, mechs in enumerate(self.cross)
                for m in mechs
            ],
            "noise_std": [float(s) for s in self.noise_std],
            "observed_idx": list(self.observed_idx),
            "target": self.target,
        }
        text = json.dumps(payload, indent=2)
        if fp is not None:
            fp.write(text)
        return text


def scm_from_json(text: str) -> Scm:
    payload = json.loads(text)
    n = payload["n_total"]
    cross: list[list[Mechanism]] = [[] for _ in range(n)]
    for entry in payload["cross"]:
        cross[entry["target"]].append(
            Mechanism(source=entry["source"], lag=entry["lag"], coeff=entry["coeff"])
        )
    return Scm(
        n_total=n,
        auto=np.asarray(payload["auto"], dtype=float),
        cross=tuple(tuple(m) for m in cross),
        noise_std=np.asarray(payload["noise_std"], dtype=float),
        observed_idx=tuple(payload["observed_idx"]),
        target=payload["target"],
    )


@dataclass(frozen=True)
class Series:
    """A generated time series plus the matching do-mask.

    ``do_mask[t, i]`` is True when cell (t, i) was set by an intervention
    rather than by the variable's own mechanism.
    """

    values: np.ndarray
    do_mask: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != self.do_mask.shape:
            raise ScmError("values and do_mask must have the same shape")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def appended(self, other: "Series") -> "Series":
        return Series(
            np.vstack([self.values, other.values]),
            np.vstack([self.do_mask, other.do_mask]),
        )

    def to_csv(self, fp: IO[str]) -> None:
        n = self.n_vars
        header = (
            "t,"
            + ",".join(f"x{i}" for i in range(n))
            + ","
            + ",".join(f"do{i}" for i in range(n))
        )
        fp.write(header + "\n")
        for t in range(self.n_steps):
            row = (
                [str(t)]
                + [repr(float(v)) for v in self.values[t]]
                + [str(int(b)) for b in self.do_mask[t]]
            )
            fp.write(",".join(row) + "\n")


def series_from_csv(fp: IO[str]) -> Series:
    header = fp.readline().strip()
    cols = header.split(",")
    if not cols or cols[0] != "t":
        raise ScmError("series CSV must start with a 't' column")
    x_cols = [c for c in cols if c.startswith("x")]
    do_cols = [c for c in cols if c.startswith("do")]
    n = len(x_cols)
    if [f"x{i}" for i in range(n)] != x_cols:
        raise ScmError("malformed series CSV header")
    if do_cols and [f"do{i}" for i in range(n)] != do_cols:
        raise ScmError("do columns must match the value columns")
    values = []
    mask = []
    for line in fp:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(cols):
            raise ScmError("series CSV row width does not match the header")
        values.append([float(v) for v in parts[1 : 1 + n]])
        if do_cols:
            mask.append([bool(int(v)) for v in parts[1 + n :]])
        else:
            mask.append([False] * n)
    return Series(np.asarray(values, dtype=float), np.asarray(mask, dtype=bool))


@dataclass(frozen=True)
class ScmConfig:
    """Sampling ranges and sizes for random ground-truth SCMs."""

    n_total: int = 7
    n_observed: int = 5
    n_links: int = 7
    frac_contemporaneous: float = 0.6
    auto_range: tuple[float, float] = (0.3, 0.6)
    coeff_range: tuple[float, float] = (0.2, 0.5)
    noise_range: tuple[float, float] = (0.5, 2.0)
    max_attempts: int = 1000

    def __post_init__(self) -> None:
        if self.n_observed > self.n_total:
            raise ScmError("cannot observe more variables than exist")
        if self.n_links < 1:
            raise ScmError("need at least one cross-link")


def check_stationarity(scm: Scm) -> bool:
    """Spectral-radius plus decay check on the reduced VAR(1) form.

    Contemporaneous effects are solved out: V_t = (I - A0)^{-1} (A1 V_{t-1} + eta).
    Accepts iff the lag-1 companion matrix has spectral radius < 0.999 and a
    500-step zero-noise run from all-ones decays below 1e-3 in max-norm.
    """
    a0, a1 = scm.lag_matrices
    eye = np.eye(scm.n_total)
    companion = np.linalg.solve(eye - a0, a1)
    radius = float(np.max(np.abs(np.linalg.eigvals(companion))))
    if radius >= 0.999:
        return False
    state = np.ones(scm.n_total)
    for _ in range(500):
        state = companion @ state
    return float(np.max(np.abs(state))) < 1e-3


def sample_scm(cfg: ScmConfig, rng: np.random.Generator) -> Scm:
    """Draw a ground-truth SCM, redrawing until it is stationary and controllable.

    Every variable receives an auto-coefficient and a noise scale from the
    configured ranges.  Exactly ``n_links`` distinct ordered variable pairs
    receive a cross-mechanism with a uniform random magnitude and sign; each
    mechanism is contemporaneous with probability ``frac_contemporaneous``
    and lag-1 otherwise (self-pairs are redrawn when they land on lag 0).
    A draw is rejected when the contemporaneous graph is cyclic, the SCM is
    non-stationary, or no cross-mechanism feeds the target variable.
    """
    n = cfg.n_total
    for _ in range(cfg.max_attempts):
        auto = rng.uniform(*cfg.auto_range, size=n)
        noise = rng.uniform(*cfg.noise_range, size=n)
        used: set[tuple[int, int]] = set()
        mechs: list[tuple[int, int, int]] = []  # (target, source, lag)
        ok = True
        for _ in range(cfg.n_links):
            lag = 0 if rng.random() < cfg.frac_contemporaneous else 1
            valid = [
                (j, i)
                for j in range(n)
                for i in range(n)
                if (j, i) not in used and not (lag == 0 and i == j)
            ]
            if not valid:
                ok = False
                break
            pair = valid[int(rng.integers(len(valid)))]
            used.add(pair)
            mechs.append((pair[0], pair[1], lag))
        if not ok:
            continue
        cross: list[list[Mechanism]] = [[] for _ in range(n)]
        for j, i, lag in mechs:
            sign = 1.0 if rng.random() < 0.5 else -1.0
            coeff = sign * rng.uniform(*cfg.coeff_range)
            cross[j].append(Mechanism(source=i, lag=lag, coeff=coeff))

        observed = sorted(rng.choice(n, size=cfg.n_observed, replace=False).tolist())
        target = int(observed[int(rng.integers(cfg.n_observed))])

        edges = [(m.source, j) for j, ms in enumerate(cross) for m in ms if m.lag == 0]
        if topological_order(n, edges) is None:
            continue
        scm = Scm(
            n_total=n,
            auto=auto,
            cross=tuple(tuple(m) for m in cross),
            noise_std=noise,
            observed_idx=tuple(observed),
            target=target,
        )
        if not any(m.source != target for m in scm.cross[target]):
            continue
        if not check_stationarity(scm):
            continue
        return scm
    raise UnsatisfiableConfigError(
        f"no valid SCM found in {cfg.max_attempts} attempts for {cfg}"
    )


def step_row(
    scm: Scm,
    prev_row: np.ndarray | None,
    current_noise: np.ndarray,
    intervention: tuple[int, float] | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate one timestep in topological order of the contemporaneous graph.

    ``prev_row`` supplies the lag-1 values (may be None when the SCM has no
    lagged terms); ``current_noise`` is the full noise row, entries of the
    intervened variable being ignored.  Returns (values, do_mask) for the step.
    """
    order = scm.contemporaneous_order
    if order is None:
        raise ScmError("contemporaneous mechanism graph is cyclic")
    n = scm.n_total
    row = np.empty(n)
    mask = np.zeros(n, dtype=bool)
    i_do = intervention[0] if intervention is not None else None
    for v in order:
        if i_do == v:
            row[v] = intervention[1]
            mask[v] = True
            continue
        val = float(current_noise[v])
        if prev_row is not None:
            val += float(scm.auto[v]) * float(prev_row[v])
        for mech in scm.cross[v]:
            src_val = row[mech.source] if mech.lag == 0 else float(prev_row[mech.source])
            val += mech.coeff * src_val
        row[v] = val
    return row, mask


def generate(
    scm: Scm,
    intervention: tuple[int, float] | None,
    start: np.ndarray,
    t_gen: int,
    rng: np.random.Generator | None,
) -> Series:
    """Generate ``t_gen`` new steps, excluding the starting rows.

    The intervened variable, if any, is clamped to the intervention value at
    every generated step with its do-mask set.  All noise for the block is
    drawn up front as one (t_gen, n) standard-normal draw scaled per
    variable; ``rng`` may be None only for noise-free SCMs.
    """
    n = scm.n_total
    start = np.asarray(start, dtype=float).reshape(-1, n)
    if start.shape[0] != scm.tau_max:
        raise ScmError(f"start must supply exactly tau_max={scm.tau_max} rows")
    if intervention is not None and not (0 <= intervention[0] < n):
        raise ScmError(f"intervention variable {intervention[0]} out of range")
    if rng is None:
        if np.any(scm.noise_std > 0):
            raise ScmError("rng required for a noisy SCM")
        noise = np.zeros((t_gen, n))
    else:
        noise = rng.standard_normal((t_gen, n)) * scm.noise_std

    values = np.empty((t_gen, n))
    mask = np.zeros((t_gen, n), dtype=bool)
    prev = start[-1] if scm.tau_max > 0 else None
    for t in range(t_gen):
        row, row_mask = step_row(scm, prev, noise[t], intervention)
        values[t] = row
        mask[t] = row_mask
        prev = row if scm.tau_max > 0 else None
    return Series(values, mask)


def warm_up_start(scm: Scm, rng: np.random.Generator) -> np.ndarray:
    """Initial rows for generation, taken from the tail of a 50-step burn-in.

    The burn-in starts from pure noise so that the returned rows come from
    the process's own distribution rather than an arbitrary initialization.
    """
    n = scm.n_total
    if scm.tau_max == 0:
        return np.zeros((0, n))
    start = rng.standard_normal((scm.tau_max, n)) * scm.noise_std
    series = generate(scm, None, start, 50, rng)
    return series.values[-scm.tau_max :].copy()


def drop_latents(series: Series, observed_idx: Sequence[int]) -> Series:
    """Project the series onto the observed columns, order preserved."""
    idx = list(observed_idx)
    return Series(series.values[:, idx].copy(), series.do_mask[:, idx].copy())
