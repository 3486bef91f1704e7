"""Hypothesis tests on fitted Hawkes models and goodness-of-fit procedures."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import partial
from typing import Optional, Sequence

import numpy as np

from ._parallel import pmap
from .core import HawkesParams, ModelSpec, Realization, compensator_at_events, identifiability_check
from .errors import (
    ConfigError,
    DataError,
    HawkesError,
    NonPositiveVariance,
    NotNormalizedLink,
    RequiresRepetitions,
    TooManyFailures,
    XiTooLarge,
)
from .likelihood import (
    FitResult,
    ParamLayout,
    RepetitionFits,
    fisher_inverse,
    fit_cross,
    fit_mle,
    fit_repetitions,
    log_likelihood_gradient,
    total_fisher,
    total_outer_fisher,
)
from .simulate import make_rng, simulate_inhomogeneous_poisson
from .stats import (
    BandResult,
    band_check,
    chi2_sf,
    empirical_moments,
    ks_statistic,
    ks_test_exp1,
    ks_test_uniform,
    normal_cdf,
    normal_quantile,
    qq_exp1,
    uniform_band,
)

MAX_FIT_FAILURES = 0.05
MIN_BOOTSTRAP_SUCCESS = 0.8


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    name: str
    statistic: float
    pvalue: float
    alpha: float
    reject: bool
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "statistic": self.statistic, "pvalue": self.pvalue,
                "alpha": self.alpha, "reject": self.reject, "details": _jsonable(self.details)}


@dataclass
class GofReport:
    per_subset_pvalues: np.ndarray
    band: BandResult
    rejection_count_at_05: int
    ks_distance_to_uniform: float
    model_label: str
    xi: float
    p_of_n: int
    mean_params: Optional[HawkesParams] = None
    failed_fits: list = field(default_factory=list)

    @property
    def rejection_rate_at_05(self) -> float:
        return self.rejection_count_at_05 / max(len(self.per_subset_pvalues), 1)

    def to_dict(self):
        return {
            "model": self.model_label,
            "per_subset_pvalues": np.asarray(self.per_subset_pvalues).tolist(),
            "band_inside": bool(self.band.inside),
            "band_first_violation": self.band.first_violation,
            "band_local_level": self.band.local_level,
            "rejection_count_at_05": self.rejection_count_at_05,
            "ks_distance_to_uniform": self.ks_distance_to_uniform,
            "xi": self.xi,
            "p_of_n": self.p_of_n,
            "mean_params": None if self.mean_params is None else self.mean_params.to_dict(),
            "failed_fits": list(self.failed_fits),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, HawkesParams):
        return obj.to_dict()
    return obj


def _two_sided(z):
    return float(min(1.0, 2.0 * normal_cdf(-abs(z))))


# --------------------------------------------------------------------------
# tests on single coefficients


def test_single_coefficient(fit: FitResult, coef, theta0: float, alpha: float = 0.05,
                            alternative: str = "two-sided") -> TestReport:
    """Wald test of theta_i = theta0 from the asymptotic normality of the MLE.

    ``alternative="less"`` tests H0: theta_i >= theta0 (rejecting for small
    values), ``"greater"`` tests H0: theta_i <= theta0.
    """
    i = fit.index(coef)
    cov = fisher_inverse(fit.fisher)
    var = cov[i, i]
    if not var > 0:
        raise NonPositiveVariance(f"non-positive asymptotic variance for {fit.names[i]}")
    sigma = math.sqrt(var)
    est = fit.theta[i]
    z = math.sqrt(fit.horizon) * (est - theta0) / sigma
    if alternative == "two-sided":
        p = _two_sided(z)
        q = float(normal_quantile(1 - alpha / 2))
        reject = abs(z) > q
    elif alternative == "less":
        p = float(normal_cdf(z))
        q = float(normal_quantile(1 - alpha))
        reject = z < -q
    elif alternative == "greater":
        p = float(normal_cdf(-z))
        q = float(normal_quantile(1 - alpha))
        reject = z > q
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    return TestReport("single_coefficient", z, p, alpha, bool(reject),
                      {"coefficient": fit.names[i], "estimate": est, "null": theta0,
                       "sigma": sigma, "quantile": q, "alternative": alternative})


def test_coefficient_equality(fit: FitResult, coef_i, coef_j, alpha: float = 0.05) -> TestReport:
    i, j = fit.index(coef_i), fit.index(coef_j)
    if i == j:
        return TestReport("coefficient_equality", 0.0, 1.0, alpha, False,
                          {"coefficients": [fit.names[i], fit.names[j]]})
    cov = fisher_inverse(fit.fisher)
    var = cov[i, i] - 2 * cov[i, j] + cov[j, j]
    if not var > 0:
        raise NonPositiveVariance("non-positive variance for the difference")
    z = math.sqrt(fit.horizon) * (fit.theta[i] - fit.theta[j]) / math.sqrt(var)
    q = float(normal_quantile(1 - alpha / 2))
    return TestReport("coefficient_equality", z, _two_sided(z), alpha, bool(abs(z) > q),
                      {"coefficients": [fit.names[i], fit.names[j]],
                       "difference": fit.theta[i] - fit.theta[j], "sigma": math.sqrt(var)})


def multiple_testing_correct(pvalues, method: str = "bonferroni", alpha: float = 0.05) -> np.ndarray:
    p = np.asarray(pvalues, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    K = p.size
    if K == 0:
        return np.zeros(0, dtype=bool)
    method = method.lower().replace("-", "").replace("_", "")
    if method == "bonferroni":
        return p < alpha / K
    if method in ("bh", "benjaminihochberg"):
        order = np.argsort(p, kind="stable")
        ok = p[order] <= alpha * np.arange(1, K + 1) / K
        out = np.zeros(K, dtype=bool)
        if ok.any():
            last = np.flatnonzero(ok)[-1]
            out[order[:last + 1]] = True
        return out
    raise ValueError(f"unknown correction {method!r}")


# --------------------------------------------------------------------------
# score test on the marks


def embed_unmarked(params: HawkesParams, spec_marked: ModelSpec, psi: float) -> HawkesParams:
    return params.replace(gamma=np.zeros((spec_marked.dim, spec_marked.dim)), psi=psi)


def test_mark_zscore(realization: Realization, spec_unmarked: ModelSpec, spec_marked: ModelSpec,
                     alpha: float = 0.05, fit: Optional[FitResult] = None,
                     information: str = "auto") -> TestReport:
    """Score test of gamma = 0 at the unmarked MLE.

    The statistic is g' [I^-1]_gg g with g the gamma-score and I the total
    (unscaled) information of the marked model, chi-square with as many
    degrees of freedom as there are free gamma parameters.

    ``information`` is "outer" (sum of per-event score outer products),
    "observed" (negative Hessian) or "auto" (outer for linear models).  The
    observed form evaluated at gamma = 0 becomes indefinite when the marks
    matter, which turns the statistic negative exactly when it should be large.
    """
    if not spec_marked.normalized:
        raise NotNormalizedLink("the score test needs a normalized mark link")
    if spec_unmarked.marked or spec_unmarked.dim != spec_marked.dim:
        raise DataError("spec_unmarked must be the unmarked version of spec_marked")
    if realization.marks is None:
        raise DataError("the score test needs marked data")
    ident = identifiability_check(realization, spec_marked)
    if not ident["ok"]:
        raise DataError("marks do not identify the mark parameters (Proposition-style check failed)")
    if fit is None:
        fit = fit_mle(spec_unmarked, realization.without_marks())
    psi = realization.n_events / float(realization.marks.sum())
    theta_m = embed_unmarked(fit.params, spec_marked, psi)
    layout = ParamLayout(spec_marked)
    gi = layout.indices("gamma")
    grad = log_likelihood_gradient(theta_m, spec_marked, realization, include_mark_density=True)
    g = grad[gi]
    if information == "auto":
        information = "observed" if spec_marked.nonlinear else "outer"
    if information == "outer":
        info = total_outer_fisher(theta_m, spec_marked, realization)
    elif information == "observed":
        info = total_fisher(theta_m, spec_marked, realization, include_mark_density=True)
    else:
        raise ValueError(f"unknown information estimate {information!r}")
    inv = fisher_inverse(info / realization.horizon) / realization.horizon
    block = inv[np.ix_(gi, gi)]
    stat = float(g @ block @ g)
    dof = len(gi)
    p = float(chi2_sf(max(stat, 0.0), dof))
    return TestReport("mark_score", stat, p, alpha, bool(p < alpha),
                      {"dof": dof, "score": g, "psi_hat": psi, "information": information,
                       "unmarked_fit": fit.params})


# --------------------------------------------------------------------------
# bootstrap


def _bootstrap_draw(real, spec, theta_hat, fixed, seed, b):
    sim = simulate_inhomogeneous_poisson(real, theta_hat, spec, rng=make_rng(seed, b))
    try:
        fit = fit_cross(spec, real, sim.times, sim.components, init=theta_hat, fixed=fixed)
    except HawkesError:
        return None
    return fit.theta if fit.converged else None


def test_bootstrap_coefficient(realization: Realization, spec: ModelSpec, coef, theta0: float,
                               B: int = 150, alpha: float = 0.05, seed: int = 0, jobs=None,
                               fit: Optional[FitResult] = None) -> TestReport:
    """Parametric bootstrap of the standard error of one coefficient.

    Each draw simulates a Poisson process with the fitted intensity frozen
    on the observed events and refits by maximizing the cross likelihood.
    """
    if B < 50:
        raise ValueError("the bootstrap needs B >= 50")
    if fit is None:
        fit = fit_mle(spec, realization)
    i = fit.index(coef)
    est = fit.theta[i]
    fixed = {"psi": fit.params.psi} if spec.normalized else None
    thetas = pmap(partial(_bootstrap_draw, realization, spec, fit.params, fixed, seed), range(B), jobs)
    ok = [t for t in thetas if t is not None]
    if len(ok) < MIN_BOOTSTRAP_SUCCESS * B:
        raise TooManyFailures(f"only {len(ok)} of {B} bootstrap refits converged")
    if len(ok) < B:
        warnings.warn(f"{B - len(ok)} bootstrap refits failed and were dropped", RuntimeWarning,
                      stacklevel=2)
    draws = np.array([t[i] for t in ok])
    sd = empirical_moments(draws)["sd"]
    if est == theta0:
        z = 0.0
    elif sd <= 0:
        raise NonPositiveVariance("bootstrap standard deviation is zero")
    else:
        z = (est - theta0) / sd
    q = float(normal_quantile(1 - alpha / 2))
    return TestReport("bootstrap_coefficient", z, _two_sided(z), alpha, bool(abs(z) > q),
                      {"coefficient": fit.names[i], "estimate": est, "null": theta0,
                       "sigma_bootstrap": sd, "B": B, "successful": len(ok),
                       "draws": draws})


# --------------------------------------------------------------------------
# goodness of fit on repetitions


def _canonical_order(realizations):
    keys = [(r.horizon, r.n_events, r.times.tobytes(), r.components.tobytes()) for r in realizations]
    return sorted(range(len(realizations)), key=lambda k: keys[k])


@dataclass
class PreparedGof:
    """Time-changed repetitions under a common parameter."""

    spec: ModelSpec
    params: HawkesParams
    transformed: list
    totals: np.ndarray
    fits: Optional[RepetitionFits] = None

    @property
    def n(self) -> int:
        return len(self.transformed)


def _merged_time_change(params, spec, real):
    at, tot = compensator_at_events(params, spec, real)
    return at.sum(axis=1), float(tot.sum())


def prepare_gof(realizations: Sequence[Realization], spec: ModelSpec, params=None,
                fits: Optional[RepetitionFits] = None, pooled: bool = False, jobs=None,
                **fit_kwargs) -> PreparedGof:
    """Fit the repetitions (unless ``params`` is given) and time-change each of
    them with the common parameter (mean of the per-repetition fits, or the
    pooled fit)."""
    reals = [realizations[k] for k in _canonical_order(realizations)]
    if len(reals) < 2:
        raise RequiresRepetitions("goodness of fit needs several repetitions")
    if params is None:
        if pooled:
            params = fit_mle(spec, reals, **fit_kwargs).params
        else:
            if fits is None:
                fits = fit_repetitions(spec, reals, jobs=jobs, **fit_kwargs)
            if fits.failure_rate > MAX_FIT_FAILURES:
                raise TooManyFailures(f"{len(fits.failed)} of {len(reals)} fits failed")
            params = fits.mean_params
    out = [_merged_time_change(params, spec, r) for r in reals]
    return PreparedGof(spec, params, [o[0] for o in out], np.array([o[1] for o in out]), fits)


def auto_xi(prep: PreparedGof, p_of_n: int, seed: int, prescan: int = 1000) -> float:
    rng = make_rng(seed, 2**63)
    lowest = math.inf
    for _ in range(prescan):
        idx = rng.choice(prep.n, size=p_of_n, replace=False)
        lowest = min(lowest, float(prep.totals[idx].sum()))
    return 0.8 * lowest / p_of_n


def _subset_pvalue(prep: PreparedGof, idx, xi: float) -> float:
    p = len(idx)
    cutoff = xi * p
    total = float(prep.totals[idx].sum())
    if cutoff >= total:
        raise XiTooLarge(f"xi * p = {cutoff:.6g} exceeds the subset's total compensator {total:.6g}")
    pieces = []
    offset = 0.0
    for r in idx:
        pieces.append(prep.transformed[r] + offset)
        offset += prep.totals[r]
        if offset >= cutoff:
            break
    pts = np.concatenate(pieces) if pieces else np.zeros(0)
    pts = pts[pts <= cutoff] / cutoff
    if pts.size == 0:
        return 1.0
    return ks_test_uniform(pts).pvalue


def _subset(prep, p_of_n, seed, s):
    return make_rng(seed, s).choice(prep.n, size=p_of_n, replace=False)


def default_p_of_n(n: int) -> int:
    return max(1, math.ceil(math.sqrt(n)))


def _resolve_xi(prep, p_of_n, xi, seed):
    if xi is None or xi == "auto":
        return auto_xi(prep, p_of_n, seed)
    xi = float(xi)
    if not xi > 0:
        raise XiTooLarge("xi must be > 0")
    return xi


def gof_subsample_test(realizations, spec: ModelSpec, p_of_n: Optional[int] = None,
                       num_subsets: int = 200, xi="auto", alpha: float = 0.05, seed: int = 0,
                       prepared: Optional[PreparedGof] = None, jobs=None, band_mc: int = 10_000,
                       **fit_kwargs) -> GofReport:
    """Subsampled goodness-of-fit test on i.i.d. repetitions.

    For each random subset of ``p_of_n`` repetitions the time-changed paths
    are concatenated, truncated at ``xi * p_of_n`` and tested for uniformity;
    the resulting p-values are then compared to the uniform distribution.
    """
    prep = prepared or prepare_gof(realizations, spec, jobs=jobs, **fit_kwargs)
    n = prep.n
    p_of_n = p_of_n or default_p_of_n(n)
    if not 1 <= p_of_n <= n:
        raise ConfigError(f"subset size must lie in 1..{n}")
    xi = _resolve_xi(prep, p_of_n, xi, seed)
    pvals = np.array([_subset_pvalue(prep, _subset(prep, p_of_n, seed, s), xi)
                      for s in range(num_subsets)])
    band = band_check(pvals, uniform_band(num_subsets, alpha, band_mc))
    return GofReport(pvals, band, int(np.sum(pvals < 0.05)), ks_statistic(np.sort(pvals)),
                     spec.label(), xi, p_of_n, prep.params,
                     [] if prep.fits is None else list(prep.fits.failed))


def gof_single_subset(realizations, spec: ModelSpec, p_of_n: Optional[int] = None, xi="auto",
                      seed: int = 0, subset_index: int = 0,
                      prepared: Optional[PreparedGof] = None, **fit_kwargs) -> float:
    prep = prepared or prepare_gof(realizations, spec, **fit_kwargs)
    p_of_n = p_of_n or default_p_of_n(prep.n)
    xi = _resolve_xi(prep, p_of_n, xi, seed)
    return _subset_pvalue(prep, _subset(prep, p_of_n, seed, subset_index), xi)


@dataclass
class Comparison:
    reports: list
    ranking: list


def model_comparison(realizations, specs: Sequence[ModelSpec], p_of_n: Optional[int] = None,
                     num_subsets: int = 200, seed: int = 0, jobs=None, **kwargs) -> Comparison:
    """Run the subsampled test for every model on the same subsets and rank
    the models by the KS distance of their p-values to uniformity."""
    if len(specs) < 2:
        raise ValueError("model comparison needs at least two models")
    reports = [gof_subsample_test(realizations, s, p_of_n, num_subsets, seed=seed, jobs=jobs, **kwargs)
               for s in specs]
    ranking = sorted(range(len(specs)), key=lambda k: reports[k].ks_distance_to_uniform)
    return Comparison(reports, ranking)


# --------------------------------------------------------------------------
# residuals


@dataclass
class ResidualReport:
    per_component: list
    merged: object
    qq: list

    def to_dict(self):
        return {
            "diagnostic_only": True,
            "per_component": [{"n": k.n, "D": k.D, "pvalue": k.pvalue} for k in self.per_component],
            "merged": {"n": self.merged.n, "D": self.merged.D, "pvalue": self.merged.pvalue},
        }


def residual_diagnostics(params: HawkesParams, spec: ModelSpec, realization: Realization) -> ResidualReport:
    """KS checks of time-changed inter-event increments against Exp(1).

    When ``params`` were fitted on the same data the KS p-values are biased
    upwards, so treat the output as a diagnostic rather than a calibrated test.
    """
    at, _ = compensator_at_events(params, spec, realization)
    per, qq = [], []
    for i in range(spec.dim):
        lam = at[realization.components == i, i]
        inc = np.diff(np.concatenate([[0.0], lam]))
        per.append(ks_test_exp1(inc))
        qq.append(qq_exp1(inc))
    merged = np.diff(np.concatenate([[0.0], at.sum(axis=1)]))
    return ResidualReport(per, ks_test_exp1(merged), qq)
