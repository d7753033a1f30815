"""Replication engine for the simulation designs, with deterministic
per-replication random streams.

Stream splitting: replication ``r`` (1-based) draws from
``numpy.random.SeedSequence(entropy=master_seed, spawn_key=(r,))``, so
results are invariant to execution order and degree of parallelism;
``spawn_key=(0,)`` is reserved for the frozen interaction-selection
stream. Identical (scenario, seed) inputs therefore produce bit-identical
reports.
"""

from __future__ import annotations

import itertools
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import AggregationError, DataError, ParameterError, WeakIdentificationError
from .estimator import (
    fit_mr2,
    fit_naive_2sls,
    fit_oracle_2sls,
    ratio_estimate,
)

LINKS = (
    "identity_full_interactions",
    "identity_sparse",
    "log_main_effects",
    "probit_threshold",
)

METHODS = ("mr2", "oracle", "naive", "ratio")

METRIC_LABELS = ("|Bias|", "√Var", "√EVar", "Cov95")


@dataclass(frozen=True)
class McScenario:
    """One data-generating configuration.

    ``beta_direct`` holds the per-candidate direct outcome effects; zero
    entries mark valid candidates. ``strength`` is the common exposure
    coefficient on every active term of the exposure equation. For the
    sparse identity link, ``gamma`` is the fraction of each interaction
    pool (orders 2..m and orders m+1..K, with m the number of invalid
    candidates) that is activated; the selection is redrawn each
    replication unless ``freeze_interactions`` is set.
    """

    n: int
    beta_direct: tuple[float, ...]
    link: str = "identity_full_interactions"
    strength: float = 0.6
    k_total: int = 5
    p: float = 0.8
    gamma: float | None = None
    beta_a: float = 1.0
    error_cov: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.25), (0.25, 1.0))
    reps: int = 1000
    seed: int = 1
    k_dagger: int = 2
    freeze_interactions: bool = False

    def __post_init__(self):
        beta = tuple(float(b) for b in self.beta_direct)
        object.__setattr__(self, "beta_direct", beta)
        if len(beta) != self.k_total:
            raise ParameterError("beta_direct length must equal k_total")
        if not 0.0 < self.p < 1.0:
            raise ParameterError("allele frequency p must lie strictly in (0, 1)")
        if self.reps < 1:
            raise ParameterError("reps must be at least 1")
        if self.n < 2:
            raise ParameterError("n must be at least 2")
        if self.link not in LINKS:
            raise ParameterError(f"unknown link {self.link!r}; choose from {LINKS}")
        if self.link == "identity_sparse":
            if self.gamma is None or not 0.0 <= self.gamma <= 1.0:
                raise ParameterError("identity_sparse needs gamma in [0, 1]")
        if not 1 <= self.k_dagger <= self.k_total:
            raise ParameterError(f"k_dagger must lie in [1, {self.k_total}]")
        cov = np.asarray(self.error_cov, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
            raise ParameterError("error_cov must be a symmetric 2x2 matrix")
        if np.any(np.linalg.eigvalsh(cov) <= 0.0):
            raise ParameterError("error_cov must be positive definite")
        object.__setattr__(
            self, "error_cov",
            tuple(tuple(float(v) for v in row) for row in cov),
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k_total": self.k_total,
            "p": self.p,
            "beta_direct": list(self.beta_direct),
            "link": self.link,
            "strength": self.strength,
            "gamma": self.gamma,
            "beta_a": self.beta_a,
            "error_cov": [list(r) for r in self.error_cov],
            "reps": self.reps,
            "seed": self.seed,
            "k_dagger": self.k_dagger,
            "freeze_interactions": self.freeze_interactions,
        }


def _rep_rng(seed: int, rep_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep_index,)))


def _interaction_pools(k_total: int, n_invalid: int):
    low_hi = max(n_invalid, 1)
    lower, higher = [], []
    for order in range(2, k_total + 1):
        for sub in itertools.combinations(range(k_total), order):
            (lower if order <= low_hi else higher).append(sub)
    return lower, higher


def _sparse_terms(scenario: McScenario, rng: np.random.Generator):
    n_invalid = sum(1 for b in scenario.beta_direct if b != 0.0)
    lower, higher = _interaction_pools(scenario.k_total, n_invalid)
    chosen = []
    for pool in (lower, higher):
        take = int(round(scenario.gamma * len(pool)))
        if take > 0:
            idx = rng.choice(len(pool), size=take, replace=False)
            chosen.extend(pool[i] for i in sorted(idx))
    return chosen


def generate(scenario: McScenario, rep_index: int) -> Dataset:
    """Draw one replication: candidates are iid Bernoulli(p) per entry,
    the error pair is bivariate normal with the configured covariance,
    the exposure follows the scenario link and the outcome adds the
    direct effects."""
    if rep_index < 1:
        raise ParameterError("rep_index is 1-based")
    rng = _rep_rng(scenario.seed, rep_index)
    interactions = None
    if scenario.link == "identity_sparse":
        if scenario.freeze_interactions:
            interactions = _sparse_terms(scenario, _rep_rng(scenario.seed, 0))
        else:
            # selection drawn first from the replication stream
            interactions = _sparse_terms(scenario, rng)
    n, k = scenario.n, scenario.k_total
    g = (rng.random((n, k)) < scenario.p).astype(np.float64)
    chol = np.linalg.cholesky(np.asarray(scenario.error_cov))
    eps = rng.standard_normal((n, 2)) @ chol.T
    c = scenario.strength
    if scenario.link == "identity_full_interactions":
        # sum of all subset products of order >= 1 equals prod(1 + G) - 1
        a = c * (np.prod(1.0 + g, axis=1) - 1.0) + eps[:, 1]
    elif scenario.link == "identity_sparse":
        signal = g.sum(axis=1)
        for sub in interactions:
            signal = signal + np.prod(g[:, list(sub)], axis=1)
        a = c * signal + eps[:, 1]
    elif scenario.link == "log_main_effects":
        a = np.exp(c * g.sum(axis=1)) + eps[:, 1]
    else:  # probit_threshold
        a = ((-3.0 + c * g.sum(axis=1) + eps[:, 1]) > 0.0).astype(np.float64)
    y = scenario.beta_a * a + g @ np.asarray(scenario.beta_direct) + eps[:, 0]
    return Dataset(y=y, a=a, g=g,
                   instrument_names=tuple(f"G{j + 1}" for j in range(k)))


def _fit_method(method: str, d: Dataset, scenario: McScenario):
    """Returns (beta_hat, variance or None). Variance is the conservative
    sandwich estimate for every regression method."""
    if method == "mr2":
        fit = fit_mr2(d, scenario.k_dagger)
        return fit.beta_a, fit.var_sandwich
    if method == "oracle":
        valid = tuple(i + 1 for i, b in enumerate(scenario.beta_direct) if b == 0.0)
        fit = fit_oracle_2sls(d, valid)
        return fit.beta_a, fit.var_sandwich
    if method == "naive":
        fit = fit_naive_2sls(d)
        return fit.beta_a, fit.var_sandwich
    if method == "ratio":
        return ratio_estimate(d), None
    raise ParameterError(f"unknown estimator {method!r}; choose from {METHODS}")


@dataclass
class McReport:
    scenario: dict
    reps: int
    estimators: tuple[str, ...]
    metrics: dict[str, dict]
    failed: dict[str, int]

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "reps": self.reps,
            "estimators": list(self.estimators),
            "metrics": self.metrics,
            "failed": self.failed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def run(scenario: McScenario, estimators=("mr2", "oracle", "naive"),
        threads: int = 1) -> McReport:
    """Run the full replication study and aggregate.

    Per estimator: |Bias| is |mean(beta_hat) - beta_a|, sqrt(Var) the
    replication standard deviation, sqrt(EVar) the square root of the mean
    variance estimate and Cov95 the fraction of replications whose
    1.96-standard-error interval covers beta_a. Replications aborted by a
    weak-identification error are counted separately and excluded from the
    aggregates.
    """
    estimators = tuple(estimators)
    if not estimators:
        raise ParameterError("estimator list is empty")
    for m in estimators:
        if m not in METHODS:
            raise ParameterError(f"unknown estimator {m!r}; choose from {METHODS}")

    def one_rep(r):
        d = generate(scenario, r)
        out = {}
        for m in estimators:
            try:
                out[m] = _fit_method(m, d, scenario)
            except WeakIdentificationError:
                out[m] = None
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one_rep, range(1, scenario.reps + 1)))
    else:
        rows = [one_rep(r) for r in range(1, scenario.reps + 1)]

    metrics: dict[str, dict] = {}
    failed: dict[str, int] = {}
    for m in estimators:
        good = [row[m] for row in rows if row[m] is not None]
        failed[m] = scenario.reps - len(good)
        if not good:
            raise AggregationError(
                f"all {scenario.reps} replications failed for estimator {m!r}"
            )
        betas = np.array([g[0] for g in good])
        has_var = all(g[1] is not None for g in good)
        entry = {
            "abs_bias": float(abs(betas.mean() - scenario.beta_a)),
            "sqrt_var": float(betas.std(ddof=1)) if betas.size >= 2 else None,
            "sqrt_evar": None,
            "cov95": None,
        }
        if has_var:
            variances = np.array([g[1] for g in good])
            ses = np.sqrt(variances)
            entry["sqrt_evar"] = float(math.sqrt(variances.mean()))
            entry["cov95"] = float(
                np.mean(np.abs(betas - scenario.beta_a) <= 1.96 * ses)
            )
        metrics[m] = entry
    return McReport(
        scenario=scenario.to_dict(),
        reps=scenario.reps,
        estimators=estimators,
        metrics=metrics,
        failed=failed,
    )


def format_report_table(report: McReport) -> str:
    """Plain-text table with the metric row labels used in the reports."""
    keys = ("abs_bias", "sqrt_var", "sqrt_evar", "cov95")
    width = max(8, *(len(m) + 2 for m in report.estimators))
    head = f"{'':8s}" + "".join(f"{m:>{width}s}" for m in report.estimators)
    lines = [head]
    for label, key in zip(METRIC_LABELS, keys):
        cells = []
        for m in report.estimators:
            v = report.metrics[m][key]
            cells.append(f"{v:>{width}.3f}" if v is not None else f"{'n/a':>{width}s}")
        lines.append(f"{label:8s}" + "".join(cells))
    failed = {m: c for m, c in report.failed.items() if c}
    if failed:
        lines.append("failed replications: " +
                     ", ".join(f"{m}={c}" for m, c in failed.items()))
    return "\n".join(lines)


def _preset(beta, link, strength, k_dagger, gamma=None):
    return McScenario(
        n=10_000, beta_direct=beta, link=link, strength=strength,
        gamma=gamma, k_dagger=k_dagger, reps=1000, seed=1,
    )


# Built-in designs: five candidates at allele frequency 0.8, effect 1,
# error correlation 0.25. Per block, beta_direct marks the invalid
# candidates and k_dagger is set to the number of valid ones.
_B3VALID = (0.0, 0.0, 0.0, 0.2, 0.2)
_B2PLUR = (0.0, 0.0, 0.1, 0.2, 0.3)
_B2VIOL = (0.0, 0.0, 0.2, 0.2, 0.2)

PRESETS: dict[str, McScenario] = {
    "table1-block1": _preset(_B3VALID, "identity_full_interactions", 0.6, 3),
    "table1-block2": _preset(_B2PLUR, "identity_full_interactions", 0.6, 2),
    "table1-block3": _preset(_B2VIOL, "identity_full_interactions", 0.6, 2),
    "table2-block1": _preset(_B3VALID, "identity_sparse", 0.6, 3, gamma=0.3),
    "table2-block2": _preset(_B3VALID, "identity_sparse", 0.6, 3, gamma=0.6),
    "table2-block3": _preset(_B2VIOL, "identity_sparse", 0.6, 2, gamma=0.3),
    "table2-block4": _preset(_B2VIOL, "identity_sparse", 0.6, 2, gamma=0.6),
    "table3-block1": _preset(_B3VALID, "log_main_effects", 1.0, 3),
    "table3-block2": _preset(_B2PLUR, "log_main_effects", 1.0, 2),
    "table3-block3": _preset(_B2VIOL, "log_main_effects", 1.0, 2),
    "table4-block1": _preset(_B3VALID, "probit_threshold", 1.0, 3),
    "table4-block2": _preset(_B2PLUR, "probit_threshold", 1.0, 2),
    "table4-block3": _preset(_B2VIOL, "probit_threshold", 1.0, 2),
}


_SCALARS = {
    "n": int, "k_total": int, "reps": int, "seed": int, "k_dagger": int,
    "p": float, "strength": float, "gamma": float, "beta_a": float,
    "link": str, "freeze_interactions": bool,
}


def load_scenario(path) -> McScenario:
    """Parse a scenario file: one ``key = value`` per line, ``#`` comments,
    values in JSON syntax except that the link name may be bare. Keys
    mirror the McScenario fields."""
    try:
        text = open(path, "r", encoding="utf-8").read()
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    fields: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.match(r"^(\w+)\s*=\s*(.+)$", line)
        if not m:
            raise DataError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = m.group(1), m.group(2).strip()
        if key not in _SCALARS and key not in ("beta_direct", "error_cov"):
            raise ParameterError(f"{path}:{lineno}: unknown scenario key {key!r}")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value  # bare strings (link names, true/false handled below)
        if isinstance(parsed, str) and parsed.lower() in ("true", "false"):
            parsed = parsed.lower() == "true"
        if key == "beta_direct":
            parsed = tuple(float(v) for v in parsed)
        elif key == "error_cov":
            parsed = tuple(tuple(float(v) for v in row) for row in parsed)
        elif key in _SCALARS and not isinstance(parsed, bool):
            parsed = _SCALARS[key](parsed)
        fields[key] = parsed
    if "n" not in fields or "beta_direct" not in fields:
        raise ParameterError(f"{path}: scenario needs at least 'n' and 'beta_direct'")
    return McScenario(**fields)
