"""Two-stage least-squares estimation of the exposure effect.

Stage 1 regresses the exposure on an intercept plus the generated
instruments; stage 2 regresses the outcome on an intercept plus the
fitted exposure (and any included exogenous regressors). The reported
``beta_a`` is the fitted-exposure coefficient.

Two variance estimates accompany every fit. Writing u for the centered
fitted exposure (equivalently, the stage-1 coefficients applied to the
mean-centered instrument block) and eps for the structural residual
``Y - b0 - beta_a * A``:

    sandwich      : sum(w^2 u^2 eps^2) / (sum(w u A))^2
    homoskedastic : mean_w(eps^2) / sum(w u^2)

The sandwich ignores the sampling variability of the centering constants
inside the generated instruments and is therefore conservative; the
simpler form is exact under homoskedastic residuals. With extra included
regressors both formulas generalize to the corresponding matrix sandwich
and the fitted-exposure diagonal entry is reported.

With the allele-count summary the generated instruments are exact linear
combinations of shared leave-one-out products whenever binomial(K, k) >
binomial(K, k-1), so the stage-1 design is rank deficient *by
construction*. The stage-1 solve therefore uses the minimum-norm
least-squares solution: dependent instrument columns share the load
without changing the exposure projection, the same projection standard
software reaches by dropping aliased regressors. Raw-candidate fits
(naive and oracle) keep the hard collinearity error, since duplicate raw
columns signal a data problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._linalg import lstsq_pivoted
from .dataset import Dataset
from .errors import (
    ParameterError,
    SampleSizeError,
    UnsupportedError,
    WeakIdentificationError,
)
from .instruments import InstrumentMatrix, build_instruments, build_weighted_instruments, estimate_weights
from .subsets import complement, enumerate_family

WEAK_ID_RTOL = 1e-8


@dataclass
class FitResult:
    """Point estimate, stage-1 coefficients and variance estimates."""

    beta_a: float
    beta_0: float
    stage1_coef: np.ndarray          # intercept first; minimum-norm when dependent
    fitted_exposure: np.ndarray
    var_sandwich: float
    var_homoskedastic: float
    residual_eps: np.ndarray         # Y - b0 - beta_a A - extras @ gamma
    n: int
    K: int
    k_dagger: int | None
    J: int
    first_stage_F: float
    method: str = "mr2"
    stage2_coef: np.ndarray | None = None
    stage2_extras: np.ndarray | None = None
    weights: np.ndarray | None = None

    @property
    def se_sandwich(self) -> float:
        return math.sqrt(self.var_sandwich)

    @property
    def se_homoskedastic(self) -> float:
        return math.sqrt(self.var_homoskedastic)

    def variance(self, mode: str = "sandwich") -> float:
        if mode == "sandwich":
            return self.var_sandwich
        if mode == "homoskedastic":
            return self.var_homoskedastic
        raise ParameterError(f"unknown variance mode {mode!r}")

    def to_json_dict(self) -> dict:
        return {
            "beta_a": self.beta_a,
            "se_sandwich": self.se_sandwich,
            "se_homoskedastic": self.se_homoskedastic,
            "first_stage_F": self.first_stage_F,
            "n": self.n,
            "K": self.K,
            "k_dagger": self.k_dagger,
            "J": self.J,
            "method": self.method,
        }


def _wmean(x, w):
    return float(np.dot(w, x) / w.sum()) if w is not None else float(x.mean())


def ratio_estimate(d: Dataset, rtol: float = WEAK_ID_RTOL) -> float:
    """Moment-ratio estimate for the single-valid-candidate case.

    Computes mean(Y * z) / mean(A * z) with z the product of all
    mean-centered candidate columns. Requires binary candidates. A
    denominator below ``rtol`` times the natural moment scale raises
    WeakIdentificationError carrying the denominator value.
    """
    if not d.has_binary_instruments():
        raise UnsupportedError("the ratio estimand is stated for binary candidates")
    z = np.ones(d.n)
    for k in range(d.k_total):
        z = z * (d.g[:, k] - d.g[:, k].mean())
    num = float(np.mean(d.y * z))
    den = float(np.mean(d.a * z))
    scale = math.sqrt(float(np.mean(d.a**2)) * float(np.mean(z**2)))
    if abs(den) <= rtol * scale:
        raise WeakIdentificationError(
            f"exposure moment {den:.3e} is below {rtol:g} of its scale {scale:.3e}; "
            "the candidates jointly carry no usable exposure signal",
            denominator=den,
        )
    return num / den


def _stage2_variances(dhat, eps, w):
    """Sandwich and homoskedastic variances of the fitted-exposure
    coefficient (column 1 of the stage-2 design)."""
    if w is None:
        bread = np.linalg.inv(dhat.T @ dhat)
        meat = (dhat * (eps**2)[:, None]).T @ dhat
        var_s = float((bread @ meat @ bread)[1, 1])
        var_h = float(np.mean(eps**2) * bread[1, 1])
    else:
        bread = np.linalg.inv((dhat * w[:, None]).T @ dhat)
        dw = dhat * (w * eps)[:, None]
        meat = dw.T @ dw
        var_s = float((bread @ meat @ bread)[1, 1])
        var_h = float(_wmean(eps**2, w) * bread[1, 1])
    return var_s, var_h


def _partial_f(a, full_fit, stage1_extra, w):
    """Classical F for joint nullity of the instrument block in the
    stage-1 regression, with the reduced model keeping intercept and any
    included exogenous regressors. Exactly dependent instrument columns
    contribute nothing to the projection, so the numerator degrees of
    freedom use the effective rank."""
    n = a.shape[0]
    if stage1_extra is not None:
        reduced = lstsq_pivoted(
            np.column_stack([np.ones(n), stage1_extra]), a, weights=w
        )
        reduced_rank, reduced_rss = reduced.rank, reduced.rss
    else:
        # intercept-only model: weighted mean and weighted RSS directly
        if w is None:
            abar = a.mean()
            reduced_rss = float(np.sum((a - abar) ** 2))
        else:
            abar = float(np.dot(w, a) / w.sum())
            reduced_rss = float(np.sum(w * (a - abar) ** 2))
        reduced_rank = 1
    df1 = full_fit.rank - reduced_rank
    df2 = n - full_fit.rank
    if df1 < 1 or df2 < 1:
        raise SampleSizeError(
            f"first-stage F undefined: {n} rows for rank {full_fit.rank} design"
        )
    num = max(reduced_rss - full_fit.rss, 0.0) / df1
    den = full_fit.rss / df2
    if den == 0.0:
        return (math.inf if num > 0.0 else 0.0), df1, df2
    return float(num / den), df1, df2


def _two_stage(y, a, z_block, *, stage1_extra, stage2_extra, weights,
               allow_dependent_instruments, z_names, extra_names,
               n_meta) -> FitResult:
    n = y.shape[0]
    j = z_block.shape[1]
    n_extra2 = 0 if stage2_extra is None else stage2_extra.shape[1]
    if n <= j + 2 + n_extra2:
        raise SampleSizeError(
            f"need more than J + 2 + extras = {j + 2 + n_extra2} rows, got {n}"
        )
    d1_cols = [np.ones((n, 1)), z_block]
    d1_names = ("intercept", *z_names)
    if stage1_extra is not None:
        d1_cols.append(stage1_extra)
        d1_names = d1_names + tuple(extra_names)
    d1 = np.hstack(d1_cols)
    stage1 = lstsq_pivoted(
        d1, a, weights=weights, names=d1_names,
        require_full_rank=not allow_dependent_instruments,
    )
    a_hat = stage1.fitted
    f_stat, _, _ = _partial_f(a, stage1, stage1_extra, weights)

    u = a_hat - _wmean(a_hat, weights)
    var_ahat = _wmean(u**2, weights)
    var_a = _wmean((a - _wmean(a, weights))**2, weights)
    # scale-aware: a constant exposure (var_a = 0) must also land here
    scale = max(var_a, 1e-12 * _wmean(a**2, weights), 1e-300)
    if var_ahat <= 1e-12 * scale:
        raise WeakIdentificationError(
            "fitted exposure is numerically constant: the instruments do not "
            f"predict the exposure (first-stage F = {f_stat:.4g})",
            denominator=var_ahat, first_stage_f=f_stat,
        )

    d2_cols = [np.ones((n, 1)), a_hat.reshape(-1, 1)]
    d2_names = ["intercept", "fitted_exposure"]
    if stage2_extra is not None:
        d2_cols.append(stage2_extra)
        d2_names.extend(extra_names)
    d2 = np.hstack(d2_cols)
    stage2 = lstsq_pivoted(
        d2, y, weights=weights, names=tuple(d2_names), require_full_rank=True
    )
    beta = stage2.coef
    beta_a = float(beta[1])
    beta_0 = float(beta[0])
    d2_structural = d2.copy()
    d2_structural[:, 1] = a
    eps = y - d2_structural @ beta
    var_s, var_h = _stage2_variances(d2, eps, weights)
    k_total, k_dagger, method = n_meta
    return FitResult(
        beta_a=beta_a,
        beta_0=beta_0,
        stage1_coef=stage1.coef,
        fitted_exposure=a_hat,
        var_sandwich=var_s,
        var_homoskedastic=var_h,
        residual_eps=eps,
        n=n,
        K=k_total,
        k_dagger=k_dagger,
        J=j,
        first_stage_F=f_stat,
        method=method,
        stage2_coef=beta,
        stage2_extras=stage2_extra,
        weights=weights,
    )


def fit_2sls(d: Dataset, z: InstrumentMatrix, extra: np.ndarray | None = None,
             allow_dependent_instruments: bool = True) -> FitResult:
    """Two-stage least squares with generated instruments.

    ``extra`` columns (eligible low-order interaction functions and/or the
    dataset covariates) enter the second stage as included regressors.
    Exactly dependent instrument columns are tolerated in stage 1 via the
    minimum-norm solve unless ``allow_dependent_instruments`` is False, in
    which case they raise CollinearityError naming the dependent columns.
    """
    if z.n != d.n:
        raise ParameterError("instrument matrix row count does not match the sample")
    extra_arr = None
    extra_names: tuple[str, ...] = ()
    if extra is not None:
        extra_arr = np.asarray(extra, dtype=np.float64)
        if extra_arr.ndim == 1:
            extra_arr = extra_arr.reshape(-1, 1)
        if extra_arr.shape[0] != d.n:
            raise ParameterError("extra regressor row count does not match the sample")
        extra_names = tuple(f"X{i + 1}" for i in range(extra_arr.shape[1]))
    z_names = tuple("Z" + "_".join(map(str, lab)) for lab in z.labels)
    return _two_stage(
        d.y, d.a, z.z,
        stage1_extra=None,
        stage2_extra=extra_arr,
        weights=z.weights,
        allow_dependent_instruments=allow_dependent_instruments,
        z_names=z_names,
        extra_names=extra_names,
        n_meta=(d.k_total, z.k_dagger, "mr2"),
    )


def fit_mr2(d: Dataset, k_dagger: int, h=None, adjust_covariates: bool = False,
            weighted: bool = False) -> FitResult:
    """Convenience pipeline: enumerate the subset family, build the
    generated instruments and fit.

    ``weighted`` switches to the dependent-candidate construction
    (empirical dependence weights applied throughout); it cannot be
    combined with covariate adjustment because the weighted centering is
    defined unconditionally.
    """
    if weighted and adjust_covariates:
        raise ParameterError(
            "weighted and covariate-adjusted modes are mutually exclusive"
        )
    fam = enumerate_family(d.k_total, k_dagger)
    if weighted:
        z = build_weighted_instruments(d, fam, estimate_weights(d), h=h)
    else:
        z = build_instruments(d, fam, h=h, adjust_covariates=adjust_covariates)
    extra = d.m if adjust_covariates else None
    return fit_2sls(d, z, extra=extra)


def variance_sandwich(fit: FitResult, z: InstrumentMatrix) -> float:
    """Conservative moment-based variance of ``beta_a``.

    Equals E_hat{uA}^-2 * E_hat{u^2 eps^2} / n with u the stage-1
    combination of the mean-centered instruments, which coincides with the
    instrument-moment form written on the centered instrument block. The
    combination only enters through the exposure projection, so it is
    insensitive to how exactly dependent columns share the coefficients.
    """
    _check_fit_matches(fit, z)
    return _variance_from_fit(fit, which="sandwich")


def variance_homoskedastic(fit: FitResult, z: InstrumentMatrix) -> float:
    """Variance of ``beta_a`` under homoskedastic structural residuals:
    plug-in of sigma^2 [E{AZ'} E{ZZ'}^-1 E{ZA}]^-1 / n with sample
    moments of the centered instrument block."""
    _check_fit_matches(fit, z)
    return _variance_from_fit(fit, which="homoskedastic")


def _check_fit_matches(fit: FitResult, z: InstrumentMatrix) -> None:
    if z.n != fit.n or z.j != fit.J:
        raise ParameterError("instrument matrix does not match the fit's sample/width")


def _variance_from_fit(fit: FitResult, which: str) -> float:
    w = fit.weights
    u = fit.fitted_exposure - _wmean(fit.fitted_exposure, w)
    # The identifying moment E_hat{uA} equals E_hat{u^2}; it is treated as
    # numerically zero when the centered projection is below the 1e-8
    # tolerance relative to the fitted-exposure magnitude.
    den = _wmean(u**2, w)
    scale = _wmean(fit.fitted_exposure**2, w)
    if den <= (WEAK_ID_RTOL**2) * max(scale, 1e-300):
        raise WeakIdentificationError(
            "identifying moment is numerically zero", denominator=float(den),
            first_stage_f=fit.first_stage_F,
        )
    if fit.stage2_extras is None:
        dhat = np.column_stack([np.ones(fit.n), fit.fitted_exposure])
    else:
        dhat = np.column_stack([np.ones(fit.n), fit.fitted_exposure, fit.stage2_extras])
    var_s, var_h = _stage2_variances(dhat, fit.residual_eps, w)
    return var_s if which == "sandwich" else var_h


@dataclass
class HOptCombination:
    """Optimal linear combination of a basis of admissible index functions.

    ``theta`` weights the basis columns; ``variance`` is the resulting
    variance estimate for the exposure-effect estimator,
    [E{AH'} E{E(eps^2|G) HH'}^-1 E{HA}]^-1 / n. ``conditional_var`` holds
    the per-row residual-variance estimates used in the weighting.
    """

    theta: np.ndarray
    variance: float
    conditional_var: np.ndarray


def h_opt_combination(d: Dataset, basis: InstrumentMatrix, residual: np.ndarray,
                      variance_model: str = "saturated") -> HOptCombination:
    """Efficiency-weighted combination of basis instrument columns.

    Parameters
    ----------
    d : Dataset
    basis : instrument matrix whose columns span the admissible index
        functions (e.g. the saturated interaction basis of orders
        K-k_dagger+1 .. K)
    residual : structural residuals from a preliminary consistent fit
    variance_model : "saturated" estimates E(eps^2 | G) by the cell means
        of the squared residuals over the distinct candidate rows (binary
        candidates give the saturated regression); "constant" uses the
        overall mean squared residual (homoskedastic mode).
    """
    residual = np.asarray(residual, dtype=np.float64).reshape(-1)
    if residual.shape[0] != d.n or basis.n != d.n:
        raise ParameterError("residual/basis length does not match the sample")
    if basis.weights is not None:
        raise UnsupportedError("optimal combination is defined for unweighted bases")
    if variance_model == "constant":
        cond = np.full(d.n, float(np.mean(residual**2)))
    elif variance_model == "saturated":
        _, inverse = np.unique(d.g, axis=0, return_inverse=True)
        sq = residual**2
        cell_mean = np.bincount(inverse, weights=sq) / np.bincount(inverse)
        cond = cell_mean[inverse]
    else:
        raise ParameterError(f"unknown variance model {variance_model!r}")
    hmat = basis.z - basis.z.mean(axis=0)
    b = hmat.T @ d.a / d.n
    if np.all(cond == 0.0):
        # perfect fit: zero asymptotic variance, any combination attains it
        return HOptCombination(theta=np.zeros(basis.j), variance=0.0,
                               conditional_var=cond)
    w1 = (hmat * cond[:, None]).T @ hmat / d.n
    sol = lstsq_pivoted(w1, b, names=tuple(map(str, basis.labels)),
                        require_full_rank=True)
    theta = sol.coef
    quad = float(b @ theta)
    if quad <= 0.0:
        raise WeakIdentificationError(
            "basis carries no exposure signal", denominator=quad
        )
    return HOptCombination(theta=theta, variance=1.0 / quad / d.n,
                           conditional_var=cond)


def _fit_raw_iv(d: Dataset, instrument_cols, included_cols, method: str,
                j_names, inc_names) -> FitResult:
    z_block = d.g[:, [k - 1 for k in instrument_cols]]
    included = d.g[:, [k - 1 for k in included_cols]] if included_cols else None
    return _two_stage(
        d.y, d.a, z_block,
        stage1_extra=included,
        stage2_extra=included,
        weights=None,
        allow_dependent_instruments=False,
        z_names=j_names,
        extra_names=inc_names,
        n_meta=(d.k_total, None, method),
    )


def fit_oracle_2sls(d: Dataset, valid_indices: tuple[int, ...]) -> FitResult:
    """Benchmark fit that knows the valid candidates: they instrument the
    exposure while the remaining candidates enter both stages as included
    exogenous regressors."""
    valid = tuple(int(v) for v in valid_indices)
    if not valid:
        raise ParameterError("oracle fit requires a nonempty set of valid candidates")
    invalid = complement(valid, d.k_total)
    return _fit_raw_iv(
        d, sorted(valid), list(invalid), "oracle",
        j_names=tuple(d.instrument_names[v - 1] for v in sorted(valid)),
        inc_names=tuple(d.instrument_names[s - 1] for s in invalid),
    )


def fit_naive_2sls(d: Dataset) -> FitResult:
    """Fit treating every candidate as a valid instrument."""
    return _fit_raw_iv(
        d, list(range(1, d.k_total + 1)), [], "naive",
        j_names=d.instrument_names, inc_names=(),
    )
