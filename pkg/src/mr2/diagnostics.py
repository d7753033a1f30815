"""Weak-instrument F diagnostic and the homogeneity test across
assumed-valid counts.

The homogeneity statistic compares two fits of the same data made under a
smaller and a larger assumed-valid count. Under the null that both are
consistent, the difference of estimates divided by the square root of the
variance difference is standard normal. The denominator is the square
root of (V_ref - V_alt); it is defined only when the reference variance
strictly exceeds the alternative's, otherwise the result carries an
explicit not-applicable status rather than a fabricated statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from ._linalg import lstsq_pivoted
from .dataset import Dataset
from .errors import ParameterError, SampleSizeError
from .estimator import FitResult
from .instruments import InstrumentMatrix


class FTest(NamedTuple):
    statistic: float
    p_value: float
    df1: int
    df2: int


def first_stage_f(d: Dataset, z: InstrumentMatrix) -> FTest:
    """Classical F statistic for joint nullity of all instrument
    coefficients in the regression of the exposure on an intercept plus
    the instruments.

    F = [(RSS0 - RSS1)/J] / [RSS1/(n - J - 1)], referred to the
    F(J, n - J - 1) law. When instrument columns are exactly dependent
    the effective rank replaces J in both degrees of freedom, matching
    how standard software treats aliased regressors.
    """
    if z.n != d.n:
        raise ParameterError("instrument matrix row count does not match the sample")
    n, j = d.n, z.j
    if n <= j + 1:
        raise SampleSizeError(f"need n > J + 1 = {j + 1} rows, got {n}")
    w = z.weights
    full = lstsq_pivoted(np.column_stack([np.ones(n), z.z]), d.a, weights=w)
    reduced = lstsq_pivoted(np.ones((n, 1)), d.a, weights=w)
    df1 = full.rank - reduced.rank
    df2 = n - full.rank
    if df1 < 1 or df2 < 1:
        raise SampleSizeError("degenerate first-stage regression")
    num = max(reduced.rss - full.rss, 0.0) / df1
    den = full.rss / df2
    f_stat = (math.inf if num > 0.0 else 0.0) if den == 0.0 else num / den
    return FTest(
        statistic=float(f_stat),
        p_value=float(stats.f.sf(f_stat, df1, df2)),
        df1=df1,
        df2=df2,
    )


@dataclass(frozen=True)
class HausmanResult:
    ht: float | None
    p_value: float | None
    k_ref: int | None
    k_alt: int | None
    status: str  # "ok" or "not_applicable"

    def to_json_dict(self) -> dict:
        return {
            "ht": self.ht,
            "p_value": self.p_value,
            "k_ref": self.k_ref,
            "k_alt": self.k_alt,
            "status": self.status,
        }


def hausman_statistic(beta_ref: float, var_ref: float,
                      beta_alt: float, var_alt: float):
    """Core arithmetic: (beta_ref - beta_alt) / sqrt(var_ref - var_alt)
    with a two-sided standard-normal p-value.

    Returns (ht, p_value, status); ht and p are None with status
    "not_applicable" when var_ref does not strictly exceed var_alt.
    """
    diff = var_ref - var_alt
    if diff <= 0.0:
        return None, None, "not_applicable"
    ht = (beta_ref - beta_alt) / math.sqrt(diff)
    p = 2.0 * float(stats.norm.sf(abs(ht)))
    return float(ht), p, "ok"


def hausman_test(fit_ref: FitResult, fit_alt: FitResult,
                 variance: str = "sandwich") -> HausmanResult:
    """Homogeneity test between two fits of the same data.

    ``fit_ref`` is the fit under the weaker assumption (smaller assumed-
    valid count, larger variance); ``fit_alt`` the more efficient one. A
    significant statistic indicates the two estimators have different
    limits, i.e. the stronger assumption is suspect.
    """
    if fit_ref.n != fit_alt.n or fit_ref.K != fit_alt.K:
        raise ParameterError("homogeneity test requires fits of the same data")
    ht, p, status = hausman_statistic(
        fit_ref.beta_a, fit_ref.variance(variance),
        fit_alt.beta_a, fit_alt.variance(variance),
    )
    return HausmanResult(ht=ht, p_value=p, k_ref=fit_ref.k_dagger,
                         k_alt=fit_alt.k_dagger, status=status)
