"""Correlation and partial-correlation tests plus Gaussian moment fitting.

The independence tests are Fisher-z tests on (partial) Pearson correlations.
They are what the discovery layers use to decide which edges survive, and the
Gaussian fits bound the candidate intervention values in the control layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri


@dataclass(frozen=True)
class TestResult:
    """Outcome of one (conditional) independence test.

    ``statistic`` is the signed sample (partial) correlation in [-1, 1];
    ``p_value`` is the two-sided Fisher-z p-value.  ``degenerate`` marks
    tests on constant input (do-interventions with a fixed value produce
    constant columns, which must flow through without raising).
    ``collinear`` marks tests where collinear conditioning columns were
    dropped before regressing.
    """

    statistic: float
    p_value: float
    degenerate: bool = False
    collinear: bool = False


@dataclass(frozen=True)
class GaussianFit:
    mu: float
    sigma: float


def _fisher_p(r: float, n_eff: int) -> float:
    """Two-sided p-value of a correlation r via the Fisher z transform.

    z = atanh(r) * sqrt(n_eff - 3); p = 2 * (1 - Phi(|z|)) = erfc(|z|/sqrt(2)).
    """
    if n_eff <= 3:
        return 1.0
    if abs(r) >= 1.0:
        return 0.0
    z = math.atanh(r) * math.sqrt(n_eff - 3)
    return math.erfc(abs(z) / math.sqrt(2.0))


def pearson_test(x: np.ndarray, y: np.ndarray) -> TestResult:
    """Pearson correlation with a Fisher-z two-sided p-value.

    Constant input yields the degenerate result (statistic 0, p = 1)
    instead of an error.  Fewer than 3 samples is an error.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("samples must have equal length")
    n = x.size
    if n < 3:
        raise ValueError(f"need at least 3 samples, got {n}")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        return TestResult(0.0, 1.0, degenerate=True)
    r = float(xc @ yc) / (sx * sy)
    r = max(-1.0, min(1.0, r))
    return TestResult(r, _fisher_p(r, n))


def partial_corr_test(
    x: np.ndarray, y: np.ndarray, conditioning: list[np.ndarray] | tuple[np.ndarray, ...] = ()
) -> TestResult:
    """Partial correlation of x and y given the conditioning vectors.

    The statistic is the Pearson correlation of the residuals of x and y
    after least-squares regression on an intercept plus the conditioning
    columns; the p-value uses the Fisher z transform with effective sample
    size n - |S|.  A rank-deficient design drops collinear columns in order
    (left to right, keeping a column only if it raises the design rank) and
    flags the result.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    cond = [np.asarray(c, dtype=float).ravel() for c in conditioning]
    n = x.size
    if y.size != n or any(c.size != n for c in cond):
        raise ValueError("all vectors must have equal length")
    n_s = len(cond)
    if n < n_s + 3:
        raise ValueError(f"need at least |S|+3 = {n_s + 3} samples, got {n}")
    if n_s == 0:
        return pearson_test(x, y)

    design = np.column_stack([np.ones(n)] + cond)
    collinear = False
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        collinear = True
        kept: list[int] = []
        for col in range(design.shape[1]):
            trial = kept + [col]
            if np.linalg.matrix_rank(design[:, trial]) > len(kept):
                kept.append(col)
        design = design[:, kept]

    coef_x, *_ = np.linalg.lstsq(design, x, rcond=None)
    coef_y, *_ = np.linalg.lstsq(design, y, rcond=None)
    rx = x - design @ coef_x
    ry = y - design @ coef_y
    sx = math.sqrt(float(rx @ rx))
    sy = math.sqrt(float(ry @ ry))
    if sx <= 1e-13 * math.sqrt(float(x @ x) + 1.0) or sy <= 1e-13 * math.sqrt(float(y @ y) + 1.0):
        return TestResult(0.0, 1.0, degenerate=True, collinear=collinear)
    r = float(rx @ ry) / (sx * sy)
    r = max(-1.0, min(1.0, r))
    return TestResult(r, _fisher_p(r, n - n_s), collinear=collinear)


def partial_corr_from_precision(prec: np.ndarray) -> float:
    """Partial correlation of the first two variables from a precision matrix."""
    return float(-prec[0, 1] / math.sqrt(prec[0, 0] * prec[1, 1]))


def fit_gaussian(x: np.ndarray) -> GaussianFit:
    """Gaussian moment fit with the population (1/T) variance."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 1:
        raise ValueError("need at least one sample")
    mu = float(x.mean())
    sigma = float(math.sqrt(np.mean((x - mu) ** 2)))
    return GaussianFit(mu, sigma)


def gaussian_percentile(fit: GaussianFit, q: float) -> float:
    """Quantile mu + sigma * Phi^{-1}(q) of the fitted Gaussian."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie strictly between 0 and 1")
    if fit.sigma == 0.0:
        return fit.mu
    return fit.mu + fit.sigma * float(ndtri(q))
