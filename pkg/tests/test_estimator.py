import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mr2 import (
    CollinearityError,
    Dataset,
    ParameterError,
    SampleSizeError,
    UnsupportedError,
    WeakIdentificationError,
    build_instruments,
    enumerate_family,
    fit_2sls,
    fit_mr2,
    fit_naive_2sls,
    fit_oracle_2sls,
    h_opt_combination,
    interaction_basis,
    ratio_estimate,
    variance_homoskedastic,
    variance_sandwich,
)

from conftest import make_reference_dataset


def bernoulli_dataset(seed, n, k, p=0.8, y=None, a=None):
    rng = np.random.default_rng(seed)
    g = (rng.random((n, k)) < p).astype(float)
    if a is None:
        a = (np.prod(1.0 + g, axis=1) - 1.0) + rng.standard_normal(n)
    if y is None:
        y = a + rng.standard_normal(n)
    return Dataset(y=y, a=a, g=g)


# ---------------------------------------------------------------- ratio

def test_ratio_noiseless_identity():
    g = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    a = g[:, 0] * g[:, 1]
    d = Dataset(y=a.copy(), a=a, g=g)
    assert ratio_estimate(d) == pytest.approx(1.0, abs=1e-12)


def test_ratio_recovers_effect_with_invalid_candidate():
    # valid first candidate, second carries a direct effect of 0.2;
    # replication mean must land within 3 Monte Carlo standard errors of 1
    estimates = []
    for rep in range(40):
        rng = np.random.default_rng(100 + rep)
        n = 20000
        g = (rng.random((n, 2)) < 0.5).astype(float)
        chol = np.linalg.cholesky(np.array([[1.0, 0.25], [0.25, 1.0]]))
        eps = rng.standard_normal((n, 2)) @ chol.T
        a = g[:, 0] + g[:, 1] + g[:, 0] * g[:, 1] + eps[:, 1]
        y = a + 0.2 * g[:, 1] + eps[:, 0]
        estimates.append(ratio_estimate(Dataset(y=y, a=a, g=g)))
    estimates = np.asarray(estimates)
    mcse = estimates.std(ddof=1) / np.sqrt(len(estimates))
    assert abs(estimates.mean() - 1.0) <= 3.0 * mcse


def test_ratio_weak_identification():
    # constant exposure makes the identifying moment exactly zero
    g = np.array([[1.0], [0.0], [1.0], [0.0]])
    d = Dataset(y=np.arange(4.0), a=np.full(4, 2.0), g=g)
    with pytest.raises(WeakIdentificationError) as err:
        ratio_estimate(d)
    assert err.value.denominator == pytest.approx(0.0, abs=1e-15)


def test_ratio_requires_binary():
    d = Dataset(y=np.arange(4.0), a=np.arange(4.0),
                g=np.array([[0.1], [0.4], [0.9], [0.3]]))
    with pytest.raises(UnsupportedError):
        ratio_estimate(d)


# ---------------------------------------------------------------- fit_2sls

def test_just_identified_matches_covariance_ratio():
    d = bernoulli_dataset(1, 4000, 3)
    z = build_instruments(d, enumerate_family(3, 3))  # single column
    fit = fit_2sls(d, z)
    col = z.z[:, 0]
    expected = np.sum((col - col.mean()) * d.y) / np.sum((col - col.mean()) * d.a)
    assert fit.beta_a == pytest.approx(expected, rel=1e-10)


def test_outcome_equals_exposure_is_exact():
    base = bernoulli_dataset(2, 2000, 3)
    d = Dataset(y=base.a.copy(), a=base.a, g=base.g)
    fit = fit_2sls(d, build_instruments(d, enumerate_family(3, 2)))
    assert fit.beta_a == pytest.approx(1.0, abs=1e-10)
    assert fit.var_sandwich <= 1e-10
    assert fit.var_homoskedastic <= 1e-10


def test_fit_result_invariants():
    d = make_reference_dataset(seed=3, n=8000)
    z = build_instruments(d, enumerate_family(5, 2))
    fit = fit_2sls(d, z)
    assert fit.var_sandwich >= 0.0 and fit.var_homoskedastic >= 0.0
    assert fit.n == 8000 and fit.K == 5 and fit.k_dagger == 2 and fit.J == 10
    # fitted exposure is exactly the stage-1 design times the coefficients
    design = np.column_stack([np.ones(d.n), z.z])
    np.testing.assert_array_equal(fit.fitted_exposure, design @ fit.stage1_coef)
    # second-stage normal equations: residual uncorrelated with (1, A_hat)
    scale = np.abs(d.y).mean()
    assert abs(fit.residual_eps.mean()) <= 1e-8 * scale
    ahat_c = fit.fitted_exposure - fit.fitted_exposure.mean()
    assert abs(np.mean(fit.residual_eps * ahat_c)) <= 1e-8 * scale * np.abs(ahat_c).max()


def test_dependent_columns_tolerated_or_reported():
    # the allele-count summary with k_dagger below (K+1)/2 produces exactly
    # dependent columns; the default uses the span projection, the strict
    # mode names the offenders
    d = make_reference_dataset(seed=4, n=4000)
    z = build_instruments(d, enumerate_family(5, 2))
    fit = fit_2sls(d, z)
    assert np.linalg.matrix_rank(z.z) == 5
    # the fitted exposure is the projection onto the instrument span, so a
    # full-rank subset of columns spanning the same space reproduces it
    basis = z.z[:, [0, 1, 2, 3, 6]]
    assert np.linalg.matrix_rank(basis) == 5
    design = np.column_stack([np.ones(d.n), basis])
    proj, *_ = np.linalg.lstsq(design, d.a, rcond=None)
    np.testing.assert_allclose(fit.fitted_exposure, design @ proj, atol=1e-8)
    with pytest.raises(CollinearityError) as err:
        fit_2sls(d, z, allow_dependent_instruments=False)
    assert err.value.columns


def test_sample_size_guard():
    d = bernoulli_dataset(5, 12, 3, p=0.5)
    z = build_instruments(d, enumerate_family(3, 1))
    fit = fit_2sls(d, z)  # 12 > 3 + 2
    assert np.isfinite(fit.beta_a)
    d_small_g = d.g[:5]
    d_small = Dataset(y=d.y[:5], a=d.a[:5], g=d_small_g)
    with pytest.raises(SampleSizeError):
        fit_2sls(d_small, build_instruments(d_small, enumerate_family(3, 1)))


def test_weak_identification_constant_exposure():
    rng = np.random.default_rng(6)
    g = (rng.random((100, 2)) < 0.5).astype(float)
    d = Dataset(y=rng.standard_normal(100), a=np.full(100, 3.0), g=g)
    z = build_instruments(d, enumerate_family(2, 1))
    with pytest.raises(WeakIdentificationError) as err:
        fit_2sls(d, z)
    assert err.value.first_stage_f is not None


@settings(max_examples=20, deadline=None)
@given(
    scale_y=st.floats(0.1, 50.0),
    scale_a=st.floats(0.1, 50.0),
    shift_y=st.floats(-20.0, 20.0),
    shift_a=st.floats(-20.0, 20.0),
)
def test_scale_and_translation_equivariance(scale_y, scale_a, shift_y, shift_a):
    d = make_reference_dataset(seed=7, n=1500)
    fam = enumerate_family(5, 3)
    base = fit_2sls(d, build_instruments(d, fam))
    d2 = Dataset(y=scale_y * d.y + shift_y, a=scale_a * d.a + shift_a, g=d.g)
    fit2 = fit_2sls(d2, build_instruments(d2, fam))
    factor = scale_y / scale_a
    assert fit2.beta_a == pytest.approx(base.beta_a * factor, rel=1e-8)
    assert fit2.var_sandwich == pytest.approx(base.var_sandwich * factor**2, rel=1e-6)
    assert fit2.var_homoskedastic == pytest.approx(
        base.var_homoskedastic * factor**2, rel=1e-6)


def test_extra_regressors_enter_stage_two():
    rng = np.random.default_rng(8)
    n = 20000
    g = (rng.random((n, 3)) < 0.5).astype(float)
    x = rng.standard_normal(n)
    a = (np.prod(1.0 + g, axis=1) - 1.0) + rng.standard_normal(n)
    y = a + 2.0 * x + rng.standard_normal(n)
    d = Dataset(y=y, a=a, g=g)
    z = build_instruments(d, enumerate_family(3, 2))
    fit = fit_2sls(d, z, extra=x)
    assert fit.beta_a == pytest.approx(1.0, abs=0.05)
    assert fit.stage2_coef[2] == pytest.approx(2.0, abs=0.05)
    # adjusting for a strong outcome predictor shrinks the variance
    plain = fit_2sls(d, z)
    assert fit.var_homoskedastic < plain.var_homoskedastic


# ------------------------------------------------------------- variances

def test_variance_ops_match_fit():
    d = make_reference_dataset(seed=9, n=6000)
    z = build_instruments(d, enumerate_family(5, 2))
    fit = fit_2sls(d, z)
    assert variance_sandwich(fit, z) == pytest.approx(fit.var_sandwich, rel=1e-12)
    assert variance_homoskedastic(fit, z) == pytest.approx(fit.var_homoskedastic, rel=1e-12)


def test_variances_agree_under_homoskedasticity():
    # all candidates valid, residual independent of them
    d = make_reference_dataset(seed=10, n=100000, beta=(0.0,) * 5)
    fit = fit_mr2(d, 3)
    ratio = fit.var_sandwich / fit.var_homoskedastic
    assert 0.8 <= ratio <= 1.2


def test_zero_residual_variance_is_zero():
    d = bernoulli_dataset(11, 1000, 2, p=0.5)
    d = Dataset(y=2.0 * d.a, a=d.a, g=d.g)
    fit = fit_mr2(d, 1)
    assert fit.var_sandwich == pytest.approx(0.0, abs=1e-18)
    assert fit.var_homoskedastic == pytest.approx(0.0, abs=1e-18)


def test_single_instrument_variance_reduction():
    # with one instrument the homoskedastic variance reduces to
    # sigma^2 / sum((Ahat - mean)^2)
    d = bernoulli_dataset(12, 3000, 2, p=0.6)
    z = build_instruments(d, enumerate_family(2, 2))
    fit = fit_2sls(d, z)
    u = fit.fitted_exposure - fit.fitted_exposure.mean()
    sigma2 = np.mean(fit.residual_eps**2)
    assert fit.var_homoskedastic == pytest.approx(sigma2 / np.sum(u**2), rel=1e-10)
    expected_sand = np.sum(u**2 * fit.residual_eps**2) / np.sum(u**2) ** 2
    assert fit.var_sandwich == pytest.approx(expected_sand, rel=1e-10)


# ------------------------------------------------------------------ h_opt

def test_h_opt_constant_mode_reduces_to_2sls():
    d = make_reference_dataset(seed=13, n=20000, beta=(0.0,) * 5)
    basis = interaction_basis(d, 2)
    fit = fit_2sls(d, basis)
    comb = h_opt_combination(d, basis, fit.residual_eps, variance_model="constant")
    assert comb.variance == pytest.approx(fit.var_homoskedastic, rel=1e-6)
    # the combination is proportional to the implicit two-stage weighting
    hc = basis.z - basis.z.mean(axis=0)
    implicit = np.linalg.solve(hc.T @ hc / d.n, hc.T @ d.a / d.n)
    ratio = comb.theta / implicit
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-6)


def test_h_opt_single_candidate_scalar_formula():
    d = bernoulli_dataset(14, 5000, 1, p=0.5)
    basis = interaction_basis(d, 1)
    fit = fit_2sls(d, basis)
    comb = h_opt_combination(d, basis, fit.residual_eps, variance_model="saturated")
    hc = (basis.z[:, 0] - basis.z[:, 0].mean())
    cond = comb.conditional_var
    expected = 1.0 / (np.mean(hc * d.a) ** 2 / np.mean(cond * hc**2)) / d.n
    assert comb.variance == pytest.approx(expected, rel=1e-10)


def test_h_opt_saturated_uses_cell_means():
    g = np.array([[0.0], [0.0], [1.0], [1.0]])
    d = Dataset(y=np.zeros(4), a=np.array([0.0, 1.0, 1.0, 3.0]), g=g)
    basis = interaction_basis(d, 1)
    residual = np.array([1.0, -1.0, 2.0, -2.0])
    comb = h_opt_combination(d, basis, residual, variance_model="saturated")
    np.testing.assert_allclose(comb.conditional_var, [1.0, 1.0, 4.0, 4.0])


def test_h_opt_zero_residual():
    d = bernoulli_dataset(15, 500, 2, p=0.5)
    basis = interaction_basis(d, 1)
    comb = h_opt_combination(d, basis, np.zeros(d.n))
    assert comb.variance == 0.0


def test_h_opt_singular_weighting():
    d = bernoulli_dataset(16, 500, 2, p=0.5)
    basis = interaction_basis(d, 1)
    from mr2 import InstrumentMatrix
    dup = InstrumentMatrix(
        z=np.column_stack([basis.z[:, 0], basis.z[:, 0]]),
        labels=((1, 2), (1, 2)), means_used={}, k_total=2, k_dagger=1,
    )
    with pytest.raises(CollinearityError):
        h_opt_combination(d, dup, np.ones(d.n))


# --------------------------------------------------------- oracle / naive

def test_oracle_all_valid_consistency():
    estimates = []
    for rep in range(30):
        rng = np.random.default_rng(200 + rep)
        n = 5000
        g = (rng.random((n, 3)) < 0.5).astype(float)
        eps = np.linalg.cholesky([[1.0, 0.25], [0.25, 1.0]])
        e = rng.standard_normal((n, 2)) @ eps.T
        a = g.sum(axis=1) + e[:, 1]
        y = a + e[:, 0]
        estimates.append(fit_oracle_2sls(Dataset(y=y, a=a, g=g), (1, 2, 3)).beta_a)
    estimates = np.asarray(estimates)
    mcse = estimates.std(ddof=1) / np.sqrt(len(estimates))
    assert abs(estimates.mean() - 1.0) <= 3.0 * mcse


def test_oracle_requires_valid_indices():
    d = bernoulli_dataset(17, 100, 3, p=0.5)
    with pytest.raises(ParameterError):
        fit_oracle_2sls(d, ())


def test_oracle_metadata():
    d = make_reference_dataset(seed=18, n=3000)
    fit = fit_oracle_2sls(d, (1, 2, 3))
    assert fit.method == "oracle"
    assert fit.k_dagger is None
    assert fit.J == 3


def test_naive_consistent_without_direct_effects():
    estimates = []
    for rep in range(30):
        rng = np.random.default_rng(300 + rep)
        n = 5000
        g = (rng.random((n, 3)) < 0.5).astype(float)
        e = rng.standard_normal((n, 2)) @ np.linalg.cholesky([[1, 0.25], [0.25, 1]]).T
        a = g.sum(axis=1) + e[:, 1]
        y = a + e[:, 0]
        estimates.append(fit_naive_2sls(Dataset(y=y, a=a, g=g)).beta_a)
    estimates = np.asarray(estimates)
    mcse = estimates.std(ddof=1) / np.sqrt(len(estimates))
    assert abs(estimates.mean() - 1.0) <= 3.0 * mcse


def test_naive_rejects_collinear_candidates():
    rng = np.random.default_rng(19)
    n = 200
    g1 = (rng.random(n) < 0.5).astype(float)
    g = np.column_stack([g1, g1, (rng.random(n) < 0.5).astype(float)])
    d = Dataset(y=rng.standard_normal(n), a=rng.standard_normal(n), g=g)
    with pytest.raises(CollinearityError):
        fit_naive_2sls(d)


def test_fit_mr2_modes_exclusive():
    d = bernoulli_dataset(20, 200, 2, p=0.5)
    with pytest.raises(ParameterError):
        fit_mr2(d, 1, adjust_covariates=True, weighted=True)


def test_union_model_consistency_where_rules_fail():
    # all three prior identifying rules violated: direct effects on three of
    # five candidates; the subset estimator still centers on 1 while the
    # naive fit does not
    mr2_est, naive_est = [], []
    for rep in range(12):
        d = make_reference_dataset(seed=400 + rep, n=50000,
                                   beta=(0.0, 0.0, 0.2, 0.2, 0.2))
        mr2_est.append(fit_mr2(d, 2).beta_a)
        naive_est.append(fit_naive_2sls(d).beta_a)
    mr2_est = np.asarray(mr2_est)
    naive_est = np.asarray(naive_est)
    mcse = mr2_est.std(ddof=1) / np.sqrt(len(mr2_est))
    assert abs(mr2_est.mean() - 1.0) <= 3.0 * mcse
    naive_mcse = naive_est.std(ddof=1) / np.sqrt(len(naive_est))
    assert abs(naive_est.mean() - 1.0) > 3.0 * naive_mcse


def test_weighted_fit_corrects_candidate_dependence():
    # Brute-force oracle over a dependent two-candidate joint law: with the
    # dependence weights the population estimand equals the true effect
    # exactly, while the unweighted estimand is biased. Enumerated here
    # independently of the estimation code, then matched by sample fits.
    cells = {(0, 0): 0.30, (0, 1): 0.20, (1, 0): 0.10, (1, 1): 0.40}
    p1 = sum(p for (g1, _), p in cells.items() if g1 == 1)
    p2 = sum(p for (_, g2), p in cells.items() if g2 == 1)
    beta_a, delta = 1.0, 0.3

    def exposure_mean(g1, g2):
        return g1 + g2 + 2.0 * g1 * g2

    def outcome_mean(g1, g2):
        return beta_a * exposure_mean(g1, g2) + delta * g2

    def expect(fn, weighted):
        total = 0.0
        for (g1, g2), p in cells.items():
            w = ((p1 if g1 else 1 - p1) * (p2 if g2 else 1 - p2) / p
                 if weighted else 1.0)
            total += p * w * fn(g1, g2)
        return total

    def estimand(weighted):
        c1 = expect(lambda a, b: a, weighted)
        c2 = expect(lambda a, b: b, weighted)
        mz = expect(lambda a, b: (a - c1) * (b - c2), weighted)
        num = expect(lambda a, b: ((a - c1) * (b - c2) - mz) * outcome_mean(a, b),
                     weighted)
        den = expect(lambda a, b: ((a - c1) * (b - c2) - mz) * exposure_mean(a, b),
                     weighted)
        return num / den

    assert estimand(True) == pytest.approx(beta_a, abs=1e-12)
    biased = estimand(False)
    assert abs(biased - beta_a) > 0.05

    rng = np.random.default_rng(99)
    n = 100000
    keys = list(cells)
    idx = rng.choice(len(keys), size=n, p=[cells[k] for k in keys])
    g = np.array([keys[i] for i in idx], dtype=float)
    eps = rng.standard_normal((n, 2)) @ np.linalg.cholesky([[1, .25], [.25, 1]]).T
    a = exposure_mean(g[:, 0], g[:, 1]) + eps[:, 1]
    y = beta_a * a + delta * g[:, 1] + eps[:, 0]
    d = Dataset(y=y, a=a, g=g)
    weighted_fit = fit_mr2(d, 1, weighted=True)
    plain_fit = fit_mr2(d, 1)
    assert abs(weighted_fit.beta_a - beta_a) <= 3.0 * weighted_fit.se_sandwich
    assert abs(plain_fit.beta_a - biased) <= 3.0 * plain_fit.se_sandwich
    assert abs(plain_fit.beta_a - beta_a) > 3.0 * plain_fit.se_sandwich


def test_variance_mode_validation():
    d = make_reference_dataset(seed=22, n=2000)
    fit = fit_mr2(d, 3)
    assert fit.variance("sandwich") == fit.var_sandwich
    assert fit.variance("homoskedastic") == fit.var_homoskedastic
    with pytest.raises(ParameterError):
        fit.variance("bootstrap")


def test_h_opt_rejects_weighted_basis():
    from mr2 import UnsupportedError as Unsupported
    from mr2 import build_weighted_instruments, estimate_weights

    d = bernoulli_dataset(23, 400, 2, p=0.5)
    z = build_weighted_instruments(d, enumerate_family(2, 1), estimate_weights(d))
    with pytest.raises(Unsupported):
        h_opt_combination(d, z, np.ones(d.n))


def test_json_serialization_schema():
    d = make_reference_dataset(seed=21, n=3000)
    fit = fit_mr2(d, 2)
    payload = fit.to_json_dict()
    assert set(payload) == {
        "beta_a", "se_sandwich", "se_homoskedastic", "first_stage_F",
        "n", "K", "k_dagger", "J", "method",
    }
    assert payload["method"] == "mr2"
