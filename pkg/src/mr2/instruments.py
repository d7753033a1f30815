"""Construction of generated instruments from candidate instruments.

For an assumed-valid index subset k = (k1 < ... < kd) the generated
instrument is

    Z_k = (H_k - center(H_k)) * prod_{s not in k} (G_s - center(G_s)),

where H_k is an analyst-chosen summary of the subset columns (default:
their row-wise sum, i.e. an allele count) and center(.) is the sample
mean, a fitted conditional mean given covariates, or a weighted sample
mean in the dependent-candidate variant. The empty product (subset equal
to the full index set) is 1 by convention.

Each such column has population mean zero and is uncorrelated with every
function of the candidates outside its subset whenever the candidates are
jointly independent and at least the subset's members are valid; that is
the property the estimator relies on.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._linalg import lstsq_pivoted
from .dataset import Dataset
from .errors import (
    CapacityError,
    DegenerateInstrumentError,
    ParameterError,
    UnsupportedError,
)
from .subsets import DEFAULT_MEMBER_CAP, SubsetFamily

HFunction = Callable[[tuple[int, ...], Dataset], np.ndarray]

DEFAULT_CELL_CAP = 2**20


@dataclass(frozen=True)
class InstrumentMatrix:
    """Generated instruments with per-column subset labels.

    ``means_used`` records the centering constants (floats) or, for the
    covariate-adjusted variant, the fitted regression coefficients
    (intercept first). ``weights`` carries the row weights the estimator
    must apply in every cross-moment for the dependent-candidate variant.
    """

    z: np.ndarray
    labels: tuple[tuple[int, ...], ...]
    means_used: dict
    k_total: int
    k_dagger: int
    weights: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def j(self) -> int:
        return self.z.shape[1]


def default_h(subset: tuple[int, ...], d: Dataset) -> np.ndarray:
    """Row-wise sum of the subset's instrument columns (allele count)."""
    cols = [int(s) - 1 for s in subset]
    return d.g[:, cols].sum(axis=1)


def _check_family(d: Dataset, fam: SubsetFamily) -> None:
    if fam.k_total != d.k_total:
        raise ParameterError(
            f"family is over {fam.k_total} candidates but the data has {d.k_total}"
        )


def _centered_product(subset, h_centered, g_centered, k_total, n):
    # Factors multiply in ascending index order, with the subset summary
    # inserted at the subset's smallest index; for singleton subsets with
    # the default summary this reproduces the plain all-column product
    # bit for bit.
    lead = min(subset)
    in_subset = set(subset)
    col = None
    for s in range(1, k_total + 1):
        if s == lead:
            factor = h_centered
        elif s in in_subset:
            continue
        else:
            factor = g_centered[s - 1]
        col = factor if col is None else col * factor
    return col if col is not None else np.ones(n)


def _negligible(centered: np.ndarray, raw_scale: float) -> bool:
    # numerically constant relative to the scale before centering
    return np.ptp(centered) <= 1e-12 * max(raw_scale, 1e-300)


def _assemble(d, fam, h, center_vec, mode, weights=None):
    # center_vec maps a raw column to (centered column, record of what was
    # subtracted: a plain mean or regression coefficients)
    h = h or default_h
    n = d.n
    g_centered, g_means, g_scale = [], {}, []
    for s in range(1, fam.k_total + 1):
        raw = d.g[:, s - 1]
        centered, used = center_vec(raw)
        if _negligible(centered, float(np.abs(raw).max())):
            raise DegenerateInstrumentError(
                f"candidate column {s} has no variation left after centering"
            )
        g_centered.append(centered)
        g_scale.append(float(np.abs(centered).max()))
        g_means[s] = used
    cols = []
    h_means = {}
    for subset in fam.members:
        hv = np.asarray(h(subset, d), dtype=np.float64).reshape(-1)
        if hv.shape[0] != n:
            raise ParameterError(f"H function returned length {hv.shape[0]}, expected {n}")
        hc, h_means[subset] = center_vec(hv)
        if _negligible(hc, float(np.abs(hv).max())):
            raise DegenerateInstrumentError(
                f"subset summary for {subset} has zero sample variance"
            )
        col = _centered_product(subset, hc, g_centered, fam.k_total, n)
        scale = float(np.abs(hc).max())
        for s in range(1, fam.k_total + 1):
            if s not in subset:
                scale *= g_scale[s - 1]
        if _negligible(col, scale):
            raise DegenerateInstrumentError(
                f"generated instrument for subset {subset} has zero sample variance"
            )
        cols.append(col)
    return InstrumentMatrix(
        z=np.column_stack(cols),
        labels=fam.members,
        means_used={"mode": mode, "h": h_means, "g": g_means},
        k_total=fam.k_total,
        k_dagger=fam.k_dagger,
        weights=weights,
    )


def build_instruments(d: Dataset, fam: SubsetFamily, h: HFunction | None = None,
                      adjust_covariates: bool = False) -> InstrumentMatrix:
    """Build the generated-instrument matrix for a subset family.

    Parameters
    ----------
    d : Dataset
    fam : SubsetFamily over the same number of candidates as ``d``
    h : optional subset-summary function ``(subset, dataset) -> (n,) vector``;
        the default is the row-wise sum of the subset columns
    adjust_covariates : when True, centering constants are replaced by the
        fitted values of least-squares regressions of each centered
        quantity on an intercept plus the dataset covariates, which
        adjusts for confounding of the candidates (e.g. ancestry).

    Raises
    ------
    DegenerateInstrumentError
        if any generated column has zero sample variance.
    CollinearityError
        if the covariate regression design is rank deficient.
    """
    _check_family(d, fam)
    if adjust_covariates:
        if d.m is None:
            raise ParameterError("covariate adjustment requested but the dataset has no covariates")
        design = np.column_stack([np.ones(d.n), d.m])
        names = ("intercept", *d.covariate_names)

        def center_vec(vec):
            fit = lstsq_pivoted(design, vec, names=names, require_full_rank=True)
            return vec - fit.fitted, fit.coef.copy()

        mode = "covariate"
    else:
        def center_vec(vec):
            mu = float(vec.mean())
            return vec - mu, mu

        mode = "plain"
    return _assemble(d, fam, h, center_vec, mode)


@dataclass(frozen=True)
class WeightVector:
    """Per-row weights: product of marginal cell frequencies over the joint one.

    Under empirically independent binary candidates every entry is 1 up to
    floating point; departures from 1 measure dependence between candidates.
    """

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise ParameterError("weights must be finite and strictly positive")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


def estimate_weights(d: Dataset, cell_cap: int = DEFAULT_CELL_CAP,
                     smoothing: float = 0.0) -> WeightVector:
    """Estimate dependence weights w_i = prod_k f_k(G_ik) / g(G_i).

    f_k are the empirical marginal frequencies and g the empirical joint
    frequency of the observed row, so a row's own joint cell always has
    positive count and no division by zero can occur. ``smoothing`` adds a
    constant to every observed cell count (marginal and joint) before
    normalizing; the default 0 keeps the raw empirical frequencies.
    """
    if not d.has_binary_instruments():
        raise UnsupportedError("dependence weights require binary (0/1) instrument columns")
    if 2**d.k_total > cell_cap:
        raise CapacityError(
            f"2^{d.k_total} joint cells exceed the cell cap {cell_cap}",
            required=2**d.k_total,
        )
    n = d.n
    ones = d.g.sum(axis=0)
    marg = np.empty((n, d.k_total))
    for k in range(d.k_total):
        p1 = (ones[k] + smoothing) / (n + 2.0 * smoothing)
        marg[:, k] = np.where(d.g[:, k] == 1.0, p1, 1.0 - p1)
    _, inverse, counts = np.unique(d.g, axis=0, return_inverse=True, return_counts=True)
    joint = (counts[inverse] + smoothing) / (n + smoothing * counts.size)
    return WeightVector(w=marg.prod(axis=1) / joint)


def build_weighted_instruments(d: Dataset, fam: SubsetFamily, w: WeightVector,
                               h: HFunction | None = None) -> InstrumentMatrix:
    """Generated instruments with all centering constants taken under the
    empirical product-of-marginals law (weighted sample means).

    The returned matrix carries the weights so the estimator applies them
    row-wise in every cross-moment. Weighted and covariate-adjusted modes
    are mutually exclusive.
    """
    _check_family(d, fam)
    wv = np.asarray(w.w, dtype=np.float64).reshape(-1)
    if wv.shape[0] != d.n:
        raise ParameterError("weight vector length does not match the sample")
    wsum = wv.sum()

    def center_vec(vec):
        mu = float(np.dot(wv, vec) / wsum)
        return vec - mu, mu

    return _assemble(d, fam, h, center_vec, "weighted", weights=wv)


def interaction_basis(d: Dataset, k_dagger: int,
                      member_cap: int = DEFAULT_MEMBER_CAP) -> InstrumentMatrix:
    """Saturated interaction basis of orders K-k_dagger+1 through K.

    For an order-L index set (k1 < ... < kL) the basis column multiplies
    the centered columns at the first K-k_dagger positions by the centered
    product of the raw columns at the remaining positions. Every column
    has conditional mean zero given the candidates outside any
    k_dagger-subset, so the basis spans the admissible index functions;
    the optimal-combination routine weights it into the efficient
    estimator.
    """
    k_total = d.k_total
    if not 1 <= k_dagger <= k_total:
        raise ParameterError(f"k_dagger must lie in [1, {k_total}], got {k_dagger}")
    total = sum(math.comb(k_total, order)
                for order in range(k_total - k_dagger + 1, k_total + 1))
    if total > member_cap:
        raise CapacityError(
            f"interaction basis has {total} columns, above the cap {member_cap}",
            required=total,
        )
    g_centered = d.g - d.g.mean(axis=0)
    head_len = k_total - k_dagger
    cols, labels = [], []
    means = {}
    for order in range(k_total - k_dagger + 1, k_total + 1):
        for subset in itertools.combinations(range(1, k_total + 1), order):
            col = np.ones(d.n)
            for s in subset[:head_len]:
                col = col * g_centered[:, s - 1]
            tail_prod = np.ones(d.n)
            for t in subset[head_len:]:
                tail_prod = tail_prod * d.g[:, t - 1]
            mu = float(tail_prod.mean())
            col = col * (tail_prod - mu)
            scale = float(np.abs(tail_prod - mu).max())
            for s in subset[:head_len]:
                scale *= float(np.abs(g_centered[:, s - 1]).max())
            if _negligible(col, scale):
                raise DegenerateInstrumentError(
                    f"basis column for index set {subset} has zero sample variance"
                )
            cols.append(col)
            labels.append(subset)
            means[subset] = mu
    return InstrumentMatrix(
        z=np.column_stack(cols),
        labels=tuple(labels),
        means_used={"mode": "basis", "tail_product": means,
                    "g": {s + 1: float(mu) for s, mu in enumerate(d.g.mean(axis=0))}},
        k_total=k_total,
        k_dagger=k_dagger,
    )
