"""Built-in simulation studies, run at desk scale by default.

Every study returns an :class:`ExperimentResult` holding a JSON summary and
CSV tables (QQ data with band limits, per-repetition statistics, rejection
rates).  Sizes are keyword arguments so the CLI can override them.
"""
from __future__ import annotations

import inspect
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict

import numpy as np

from .core import HawkesParams, ModelSpec
from .errors import ConfigError, NonPositiveVariance, SingularFisher, UnknownExperiment
from .io import write_json, write_table
from .likelihood import ParamLayout, fit_mle, fit_repetitions
from .procedures import (
    GofReport,
    gof_subsample_test,
    model_comparison,
    prepare_gof,
    residual_diagnostics,
    test_bootstrap_coefficient,
    test_coefficient_equality,
    test_mark_zscore,
    test_single_coefficient,
)
from .simulate import SimConfig, make_rng, simulate_repetitions
from .stats import normal_band_check, qq_normal, qq_uniform, uniform_band

LINEAR = ModelSpec()
NONLINEAR = ModelSpec(linearity="nonlinear")
POISSON = ModelSpec.poisson()

QQ_HEADER = ["series", "theoretical_quantile", "empirical_quantile", "band_lower", "band_upper"]


@dataclass
class ExperimentResult:
    name: str
    summary: dict
    tables: Dict[str, tuple] = field(default_factory=dict)

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        paths = [write_json({"experiment": self.name, **self.summary}, out / f"{self.name}_summary.json")]
        for fname, (header, rows) in self.tables.items():
            paths.append(write_table(out / f"{self.name}_{fname}.csv", header, rows))
        return paths


def _params(m, a, b, **kw):
    return HawkesParams(m=m, a=a, b=b, **kw)


def _reps(spec, params, horizon, n, seed, jobs):
    return simulate_repetitions(SimConfig(spec, params, float(horizon), seed=seed), n, jobs=jobs)


def _qq_normal_rows(label, z, band):
    return [[label, *row] for row in qq_normal(z, band).tolist()]


def _qq_uniform_rows(label, p, band):
    return [[label, *row] for row in qq_uniform(p, band).tolist()]


def _normal_series(label, z, band_mc):
    """Band verdict plus QQ rows for a sample of standardized statistics."""
    z = np.asarray(z, dtype=float)
    undefined = int(np.sum(~np.isfinite(z)))
    z = z[np.isfinite(z)]
    check = normal_band_check(z, mc_reps=band_mc)
    info = {"n": int(z.size), "band_inside": bool(check.inside),
            "mean": float(z.mean()), "sd": float(z.std(ddof=1)) if z.size > 1 else 0.0,
            "rejection_rate_05": float(np.mean(np.abs(z) > 1.959963984540054)),
            "undefined_statistics": undefined}
    return info, _qq_normal_rows(label, z, check)


def _gof_summary(rep: GofReport) -> dict:
    p = rep.per_subset_pvalues
    return {"model": rep.model_label, "band_inside": bool(rep.band.inside),
            "rejection_rate_05": rep.rejection_rate_at_05,
            "ks_distance_to_uniform": rep.ks_distance_to_uniform,
            "median_pvalue": float(np.median(p)), "fraction_above_half": float(np.mean(p > 0.5)),
            "xi": rep.xi, "p_of_n": rep.p_of_n, "failed_fits": len(rep.failed_fits)}


def _fits(spec, reps, jobs, **kw):
    return fit_repetitions(spec, reps, jobs=jobs, **kw)


def _standardized(fit, name, truth):
    # boundary fits (a = 0 leaves b unidentified) have no usable variance
    try:
        return test_single_coefficient(fit, name, truth).statistic
    except (NonPositiveVariance, SingularFisher):
        return math.nan


# --------------------------------------------------------------------------
# studies


def fig1(seed=1, n=100, horizon=2000.0, band_mc=10_000, jobs=None) -> ExperimentResult:
    """Wald statistic for a = 0 on Poisson data: every parameter estimated
    versus baseline and decay known (the latter fitted without a sign
    constraint on a)."""
    reps = _reps(POISSON, HawkesParams.poisson([1.0]), horizon, n, seed, jobs)
    fits = _fits(LINEAR, reps, jobs)
    z_est = [_standardized(f, "a", 0.0) for f in fits.per_rep if f.converged]
    known = [fit_mle(NONLINEAR, r, fixed={"m": 1.0, "b": 1.0}) for r in reps]
    z_known = [_standardized(f, "a", 0.0) for f in known if f.converged]
    s_est, rows_est = _normal_series("estimated", z_est, band_mc)
    s_known, rows_known = _normal_series("known_m_b", z_known, band_mc)
    return ExperimentResult("fig1", {"n": n, "horizon": horizon, "seed": seed,
                                     "estimated": s_est, "known_m_b": s_known},
                            {"qq": (QQ_HEADER, rows_est + rows_known)})


def fig2(seed=2, n=20, horizon=1000.0, B=50, a=0.6, b=1.0, jobs=None) -> ExperimentResult:
    """Bootstrap test on a: size at the true value and power against a = 0."""
    truth = _params([1.0], [[a]], [b])
    reps = _reps(LINEAR, truth, horizon, n, seed, jobs)
    rows, type1, power = [], [], []
    for r_idx, r in enumerate(reps):
        fit = fit_mle(LINEAR, r)
        rep = test_bootstrap_coefficient(r, LINEAR, "a", a, B=B, seed=seed * 1_000_003 + r_idx,
                                         jobs=jobs, fit=fit)
        sd = rep.details["sigma_bootstrap"]
        z0 = (fit.value("a") - 0.0) / sd
        type1.append(rep.reject)
        power.append(abs(z0) > 1.959963984540054)
        rows.append([r_idx, fit.value("a"), sd, rep.statistic, rep.pvalue, z0])
    return ExperimentResult(
        "fig2",
        {"n": n, "horizon": horizon, "B": B, "seed": seed,
         "type1_rate": float(np.mean(type1)), "power_vs_zero": float(np.mean(power))},
        {"draws": (["rep", "a_hat", "sigma_bootstrap", "z_true", "p_true", "z_zero"], rows)})


def _gof_block(label, reps, specs, seed, num_subsets, band_mc, jobs, fits=None):
    summary, rows = {}, []
    for key, spec in specs.items():
        prep = prepare_gof(reps, spec, fits=(fits or {}).get(key), jobs=jobs)
        rep = gof_subsample_test(reps, spec, num_subsets=num_subsets, seed=seed, prepared=prep,
                                 band_mc=band_mc)
        summary[key] = _gof_summary(rep)
        rows += _qq_uniform_rows(f"{label}:{key}", rep.per_subset_pvalues, rep.band)
    return summary, rows


def fig3(seed=3, n=200, horizon=2000.0, a=0.6, b=1.0, num_subsets=200, band_mc=10_000,
         jobs=None) -> ExperimentResult:
    """Subsampled GoF on Poisson and on Hawkes data, each tested against a
    Poisson and a Hawkes model."""
    specs = {"poisson": POISSON, "hawkes": LINEAR}
    summary = {"n": n, "horizon": horizon, "seed": seed}
    rows = []
    data = {"poisson_data": (POISSON, HawkesParams.poisson([1.0])),
            "hawkes_data": (LINEAR, _params([1.0], [[a]], [b]))}
    for k, (label, (sim_spec, truth)) in enumerate(data.items()):
        reps = _reps(sim_spec, truth, horizon, n, seed * 10 + k, jobs)
        summary[label], r = _gof_block(label, reps, specs, seed, num_subsets, band_mc, jobs)
        rows += r
    return ExperimentResult("fig3", summary, {"qq": (QQ_HEADER, rows)})


def fig4(seed=4, n=200, horizon=2000.0, a_values=(0.05, 0.1, 0.4), b=1.0, num_subsets=200,
         band_mc=10_000, jobs=None) -> ExperimentResult:
    """Poisson model tested on Hawkes data of increasing excitation."""
    summary = {"n": n, "horizon": horizon, "b": b, "seed": seed, "by_a": {}}
    rows = []
    for k, a in enumerate(a_values):
        reps = _reps(LINEAR, _params([1.0], [[a]], [b]), horizon, n, seed * 10 + k, jobs)
        s, r = _gof_block(f"a={a}", reps, {"poisson": POISSON}, seed, num_subsets, band_mc, jobs)
        summary["by_a"][str(a)] = s["poisson"]
        rows += r
    return ExperimentResult("fig4", summary, {"qq": (QQ_HEADER, rows)})


def fig5(seed=5, n=100, horizon=5000.0, a=-0.6, b=2.0, band_mc=10_000, jobs=None) -> ExperimentResult:
    """Standardized nonlinear MLEs under inhibition."""
    truth = _params([1.0], [[a]], [b])
    reps = _reps(NONLINEAR, truth, horizon, n, seed, jobs)
    fits = _fits(NONLINEAR, reps, jobs)
    summary = {"n": n, "horizon": horizon, "seed": seed, "failed_fits": len(fits.failed)}
    rows = []
    for name, val in (("m", 1.0), ("a", a), ("b", b)):
        z = [_standardized(f, name, val) for f in fits.per_rep if f.converged]
        summary[name], r = _normal_series(name, z, band_mc)
        rows += r
    return ExperimentResult("fig5", summary, {"qq": (QQ_HEADER, rows)})


def fig6(seed=6, n=200, horizon=2000.0, a=-0.6, b=2.0, num_subsets=200, band_mc=10_000,
         jobs=None) -> ExperimentResult:
    """GoF on inhibited data with the nonlinear and the linear compensator."""
    reps = _reps(NONLINEAR, _params([1.0], [[a]], [b]), horizon, n, seed, jobs)
    summary, rows = _gof_block("inhibition", reps, {"nonlinear": NONLINEAR, "linear": LINEAR},
                               seed, num_subsets, band_mc, jobs)
    summary.update({"n": n, "horizon": horizon, "seed": seed})
    return ExperimentResult("fig6", summary, {"qq": (QQ_HEADER, rows)})


def _mark_scenario(reps, marked_spec, jobs):
    z, p = [], []
    for r in reps:
        unmarked = fit_mle(LINEAR, r.without_marks())
        p.append(test_mark_zscore(r, LINEAR, marked_spec, fit=unmarked).pvalue)
        fit = fit_mle(marked_spec, r)
        if fit.converged:
            z.append(_standardized(fit, "gamma", 0.0))
    return np.array(z), np.array(p)


def fig7(seed=7, n=100, horizon=2000.0, gamma=0.5, psi=1.0, a=0.6, b=1.0, band_mc=10_000,
         jobs=None) -> ExperimentResult:
    """Mark coefficient: standardized gamma-hat and the score test, on data
    without and with a mark effect."""
    spec = LINEAR.with_link("normexp")
    summary = {"n": n, "horizon": horizon, "seed": seed}
    rows, per = [], []
    for k, (label, g) in enumerate((("unmarked_data", 0.0), ("marked_data", gamma))):
        truth = _params([1.0], [[a]], [b], gamma=[[g]], psi=psi)
        reps = _reps(spec, truth, horizon, n, seed * 10 + k, jobs)
        z, p = _mark_scenario(reps, spec, jobs)
        s, r = _normal_series(label, z, band_mc)
        s["score_test_rejection_rate"] = float(np.mean(p < 0.05))
        summary[label] = s
        rows += r
        per += [[label, i, float(pv)] for i, pv in enumerate(p)]
    return ExperimentResult("fig7", summary, {"qq": (QQ_HEADER, rows),
                                              "score_pvalues": (["scenario", "rep", "pvalue"], per)})


def fig8(seed=8, n=200, horizon=2000.0, a=0.6, b=1.0, gamma=0.5, psi_norm=1.0, psi_raw=0.5,
         num_subsets=200, band_mc=10_000, jobs=None) -> ExperimentResult:
    """Model comparison on marked data: normalized exponential link (marks
    matter) and a non-normalized power link."""
    summary = {"n": n, "horizon": horizon, "seed": seed}
    rows = []
    cases = {
        "normalized": (LINEAR.with_link("normexp"), psi_norm),
        "non_normalized": (LINEAR.with_link("power"), psi_raw),
    }
    for k, (label, (spec, psi)) in enumerate(cases.items()):
        truth = _params([1.0], [[a]], [b], gamma=[[gamma]], psi=psi)
        reps = _reps(spec, truth, horizon, n, seed * 10 + k, jobs)
        specs = [POISSON, LINEAR, spec]
        cmp = model_comparison(reps, specs, num_subsets=num_subsets, seed=seed, jobs=jobs,
                               band_mc=band_mc)
        summary[label] = {"reports": [_gof_summary(r) for r in cmp.reports],
                          "ranking": [specs[i].label() for i in cmp.ranking]}
        for r in cmp.reports:
            rows += _qq_uniform_rows(f"{label}:{r.model_label}", r.per_subset_pvalues, r.band)
    return ExperimentResult("fig8", summary, {"qq": (QQ_HEADER, rows)})


def fig9(seed=9, pool=200, horizon=2000.0, n_values=(10, 25, 50, 100), studies=20,
         num_subsets=100, gamma=0.5, psi=1.0, a=0.6, b=1.0, band_mc=10_000,
         jobs=None) -> ExperimentResult:
    """Power of the GoF procedure against the number of repetitions.

    Per-repetition fits are computed once on a pool; each study draws n
    repetitions from the pool and runs the subsampled test with the mean of
    their fits.  Power = share of studies whose p-values leave the band.
    """

    spec_m = LINEAR.with_link("normexp")
    truth = _params([1.0], [[a]], [b], gamma=[[gamma]], psi=psi)
    reps = _reps(spec_m, truth, horizon, pool, seed, jobs)
    specs = {"poisson": POISSON, "unmarked": LINEAR, "normexp": spec_m}
    fits = {k: _fits(s, reps, jobs).per_rep for k, s in specs.items()}
    rng = make_rng(seed, 2**62)
    rows, curves = [], {k: [] for k in specs}
    for n in n_values:
        hits = {k: 0 for k in specs}
        for st in range(studies):
            idx = np.sort(rng.choice(pool, size=n, replace=False))
            sub = [reps[i] for i in idx]
            for key, spec in specs.items():
                ok = [fits[key][i] for i in idx if fits[key][i].converged]
                theta = np.mean([f.theta for f in ok], axis=0)
                params = ParamLayout(spec).to_params(theta, psi=ok[0].params.psi)
                prep = prepare_gof(sub, spec, params=params)
                rep = gof_subsample_test(sub, spec, num_subsets=num_subsets, seed=seed + st,
                                         prepared=prep, band_mc=band_mc)
                hits[key] += int(not rep.band.inside)
        for key in specs:
            power = hits[key] / studies
            curves[key].append(power)
            rows.append([key, n, power])
    return ExperimentResult(
        "fig9", {"pool": pool, "horizon": horizon, "studies": studies, "seed": seed,
                 "n_values": list(n_values), "power": curves},
        {"power": (["model", "repetitions", "power"], rows)})


def fig10(seed=10, n=100, horizon=2000.0, band_mc=10_000, jobs=None) -> ExperimentResult:
    """Equality test b_1 = b_2 in two dimensions, under the null and under
    b = (1, 1.5)."""
    spec = ModelSpec(dim=2)
    summary = {"n": n, "horizon": horizon, "seed": seed}
    rows = []
    for k, (label, bvec) in enumerate((("equal_b", [1.0, 1.0]), ("different_b", [1.0, 1.5]))):
        truth = _params([0.5, 0.2], [[0.4, 0.2], [0.2, 0.6]], bvec)
        reps = _reps(spec, truth, horizon, n, seed * 10 + k, jobs)
        fits = _fits(spec, reps, jobs)
        z = [test_coefficient_equality(f, "b[1]", "b[2]").statistic for f in fits.per_rep if f.converged]
        summary[label], r = _normal_series(label, z, band_mc)
        rows += r
    return ExperimentResult("fig10", summary, {"qq": (QQ_HEADER, rows)})


def fig13(seed=13, n=200, horizon=2000.0, a=0.6, b=1.0, num_subsets=200, band_mc=10_000,
          jobs=None) -> ExperimentResult:
    """Residual KS tests with parameters fitted on the same path, on an
    independent path, and the subsampled procedure."""
    truth = _params([1.0], [[a]], [b])
    reps = _reps(LINEAR, truth, horizon, n, seed, jobs)
    fits = _fits(LINEAR, reps, jobs)
    per = fits.per_rep
    same = np.array([residual_diagnostics(per[k].params, LINEAR, r).merged.pvalue
                     for k, r in enumerate(reps)])
    indep = np.array([residual_diagnostics(per[(k + 1) % n].params, LINEAR, r).merged.pvalue
                      for k, r in enumerate(reps)])
    prep = prepare_gof(reps, LINEAR, fits=fits)
    gof = gof_subsample_test(reps, LINEAR, num_subsets=num_subsets, seed=seed, prepared=prep,
                             band_mc=band_mc)
    band = uniform_band(n, 0.05, band_mc)
    rows = (_qq_uniform_rows("same_sample", same, band) + _qq_uniform_rows("independent_sample", indep, band)
            + _qq_uniform_rows("subsampled", gof.per_subset_pvalues, gof.band))
    return ExperimentResult(
        "fig13",
        {"n": n, "horizon": horizon, "seed": seed,
         "same_sample_rejection_rate": float(np.mean(same < 0.05)),
         "independent_sample_rejection_rate": float(np.mean(indep < 0.05)),
         "subsampled": _gof_summary(gof)},
        {"qq": (QQ_HEADER, rows)})


CATALOG: Dict[str, Callable[..., ExperimentResult]] = {
    "fig1": fig1, "fig2": fig2, "fig3": fig3, "fig4": fig4, "fig5": fig5, "fig6": fig6,
    "fig7": fig7, "fig8": fig8, "fig9": fig9, "fig10": fig10, "fig13": fig13,
}


def experiment_options(name: str) -> dict:
    fn = _lookup(name)
    return {k: p.default for k, p in inspect.signature(fn).parameters.items()}


def _lookup(name):
    try:
        return CATALOG[name]
    except KeyError:
        raise UnknownExperiment(f"unknown experiment {name!r}; choose from {sorted(CATALOG)}") from None


def run_experiment(name: str, out_dir=None, **overrides) -> ExperimentResult:
    """Run a catalog study; ``overrides`` replace its keyword defaults."""
    fn = _lookup(name)
    allowed = set(inspect.signature(fn).parameters)
    unknown = set(overrides) - allowed
    if unknown:
        raise ConfigError(f"{name} does not take {sorted(unknown)}; options are {sorted(allowed)}")
    kwargs = {k: v for k, v in overrides.items() if v is not None}
    t0 = time.perf_counter()
    res = fn(**kwargs)
    res.summary["elapsed_seconds"] = round(time.perf_counter() - t0, 3)
    if out_dir is not None:
        res.write(out_dir)
    return res
