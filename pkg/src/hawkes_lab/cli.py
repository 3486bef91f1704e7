"""Command-line front end: ``hawkes-lab simulate|fit|test|experiment``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (including non-converged fits).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ModelConfig, RunConfig, load_config
from .errors import ConfigError, DataError, DomainError, HawkesError, NumericalError, RequiresRepetitions
from .experiments import CATALOG, experiment_options, run_experiment
from .io import config_hash, read_events, read_json, write_events, write_json, write_table
from .likelihood import FitBounds, fit_mle, fit_repetitions
from .procedures import (
    gof_subsample_test,
    residual_diagnostics,
    test_bootstrap_coefficient,
    test_coefficient_equality,
    test_mark_zscore,
    test_single_coefficient,
)
from .simulate import SimConfig, simulate_repetitions
from .stats import qq_uniform, uniform_band

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST = "manifest.json"
QQ_HEADER = ["series", "theoretical_quantile", "empirical_quantile", "band_lower", "band_upper"]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes (default $HAWKES_LAB_JOBS or 1; <=0 means all CPUs)")


def _data_flags(p):
    p.add_argument("files", nargs="+", type=Path, help="event CSV files (time,component[,mark])")
    p.add_argument("--horizon", type=float, help="observation horizon T (default: config, manifest, then last event)")
    p.add_argument("--jitter", action="store_true", help="break tied event times by a tiny deterministic shift")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hawkes-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate repetitions to CSV")
    _common(p)
    p.add_argument("--horizon", type=float)
    p.add_argument("--repetitions", type=int)

    p = sub.add_parser("fit", help="maximum-likelihood fit of one or more event files")
    _common(p)
    _data_flags(p)

    p = sub.add_parser("test", help="run a testing procedure")
    tsub = p.add_subparsers(dest="test", required=True)
    for name, helptext in (("coef", "Wald test of one coefficient"),
                           ("equality", "Wald test that two coefficients are equal"),
                           ("zscore", "score test for a mark effect"),
                           ("bootstrap", "bootstrap-variance test of one coefficient"),
                           ("gof", "subsampled goodness of fit over repetitions"),
                           ("residuals", "KS diagnostics of time-changed residuals")):
        t = tsub.add_parser(name, help=helptext)
        _common(t)
        _data_flags(t)
        t.add_argument("--alpha", type=float)
        t.add_argument("--qq-out", type=Path, help="CSV of QQ points with band limits")
        if name in ("coef", "equality", "bootstrap"):
            t.add_argument("--index", dest="coefficient", help="coefficient name, e.g. a or a[1,2]")
        if name in ("coef", "bootstrap"):
            t.add_argument("--null", type=float, help="value under the null hypothesis")
        if name == "equality":
            t.add_argument("--index-j", dest="coefficient_j")
        if name == "bootstrap":
            t.add_argument("--draws", type=int, dest="bootstrap_draws")
        if name == "zscore":
            t.add_argument("--link", dest="marked_link", choices=["normexp", "normpower"])
        if name == "gof":
            t.add_argument("--p-of-n", type=int, dest="p_of_n")
            t.add_argument("--num-subsets", type=int, dest="num_subsets")
            t.add_argument("--xi", help='thinning level or "auto"')

    p = sub.add_parser("experiment", help="run a built-in simulation study")
    _common(p)
    p.add_argument("name", help=f"one of {', '.join(CATALOG)}")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a study option (value parsed as JSON when possible)")
    p.add_argument("--qq-out", type=Path, help="copy of the study's QQ table")
    return parser


# --------------------------------------------------------------------------
# helpers


def _config(args) -> RunConfig:
    overrides = {"seed": args.seed, "jobs": args.jobs}
    if getattr(args, "horizon", None) is not None:
        overrides["horizon"] = args.horizon
    if getattr(args, "repetitions", None) is not None:
        overrides["repetitions"] = args.repetitions
    cfg = load_config(args.config, overrides)
    test_over = {k: getattr(args, k, None) for k in
                 ("alpha", "coefficient", "coefficient_j", "null", "bootstrap_draws", "marked_link",
                  "p_of_n", "num_subsets", "xi")}
    if test_over.get("xi") not in (None, "auto"):
        try:
            test_over["xi"] = float(test_over["xi"])
        except ValueError:
            raise ConfigError(f"--xi must be a number or 'auto', got {test_over['xi']!r}") from None
    test_over = {k: v for k, v in test_over.items() if v is not None}
    if test_over:
        cfg = cfg.model_copy(update={"test": cfg.test.model_validate({**cfg.test.model_dump(), **test_over})})
    return cfg


def _provenance(cfg: RunConfig, command: str, extra=None) -> dict:
    payload = {"config": cfg.model_dump(mode="json"), "command": command, **(extra or {})}
    return {"library_version": __version__, "seed": cfg.seed, "config_hash": config_hash(payload),
            "command": command}


def _horizon_for(path: Path, cfg: RunConfig):
    if cfg.horizon is not None:
        return cfg.horizon
    manifest = path.parent / MANIFEST
    if manifest.exists():
        h = read_json(manifest).get("horizon")
        if h is not None:
            return float(h)
    return None


def _load(args, cfg: RunConfig, keep_marks=False):
    """Read the event files and settle the model: the configured one, or an
    unmarked linear model of the data's dimension when no config is given."""
    reals = []
    dim = cfg.model.dimension if args.config is not None else None
    for f in args.files:
        reals.append(read_events(f, horizon=_horizon_for(f, cfg), dim=dim, jitter=args.jitter))
    if args.config is None:
        d = max(r.dim for r in reals)
        reals = [r if r.dim == d else type(r)(r.times, r.components, r.horizon, d, r.marks) for r in reals]
        cfg = cfg.model_copy(update={"model": ModelConfig(dimension=d)})
    spec = cfg.spec()
    if not spec.marked and not keep_marks:
        reals = [r.without_marks() if r.marked else r for r in reals]
    return cfg, spec, reals


def _fit_kwargs(cfg: RunConfig) -> dict:
    kw = {"multistart": cfg.multistart, "maxiter": cfg.max_iter, "seed": cfg.seed}
    if cfg.init is not None:
        kw["init"] = cfg.init.to_params()
    if cfg.bounds is not None:
        kw["bounds"] = FitBounds(dict(cfg.bounds.lower), dict(cfg.bounds.upper))
    if cfg.fixed:
        kw["fixed"] = dict(cfg.fixed)
    return kw


def _emit(report: dict, args, filename: str) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, default=_jsonify)
    print(text)
    if args.out is not None:
        write_json(report, args.out / filename)


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(type(obj).__name__)


def _single(reals, what):
    if len(reals) != 1:
        raise DataError(f"{what} takes exactly one event file, got {len(reals)}")
    return reals[0]


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if cfg.params is None:
        raise ConfigError("simulate needs 'params' in the config")
    if cfg.horizon is None:
        raise ConfigError("simulate needs a horizon (config or --horizon)")
    if args.out is None:
        raise ConfigError("simulate needs --out")
    spec, params = cfg.spec(), cfg.params.to_params()
    reals = simulate_repetitions(SimConfig(spec, params, cfg.horizon, seed=cfg.seed), cfg.repetitions,
                                 jobs=cfg.jobs)
    width = max(4, len(str(len(reals))))
    files = []
    for k, r in enumerate(reals, start=1):
        name = f"rep_{k:0{width}d}.csv"
        write_events(r, args.out / name)
        files.append({"file": name, "events": r.n_events})
    manifest = {"provenance": _provenance(cfg, "simulate"), "seed": cfg.seed, "horizon": cfg.horizon,
                "model": spec.to_dict(), "params": params.to_dict(), "repetitions": files}
    write_json(manifest, args.out / MANIFEST)
    print(json.dumps({"out": str(args.out), "repetitions": len(files),
                      "events": [f["events"] for f in files]}))
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _config(args)
    cfg, spec, reals = _load(args, cfg)
    kw = _fit_kwargs(cfg)
    prov = _provenance(cfg, "fit", {"files": [str(f) for f in args.files]})
    if len(reals) == 1:
        fit = fit_mle(spec, reals[0], **kw)
        _emit({"provenance": prov, "fit": fit.to_dict()}, args, "fit.json")
        return EXIT_OK if fit.converged else EXIT_NUMERIC
    fits = fit_repetitions(spec, reals, jobs=cfg.jobs, **kw)
    report = {
        "provenance": prov,
        "mean_params": None if fits.mean_params is None else fits.mean_params.to_dict(),
        "used": fits.used, "failed": fits.failed, "failure_rate": fits.failure_rate,
        "per_rep": [f.to_dict() if hasattr(f, "to_dict") else {"error": str(f)} for f in fits.per_rep],
    }
    _emit(report, args, "fit.json")
    return EXIT_OK if fits.mean_params is not None else EXIT_NUMERIC


def _fit_single(spec, real, cfg):
    fit = fit_mle(spec, real, **_fit_kwargs(cfg))
    if not fit.converged:
        raise NumericalError(f"fit did not converge: {fit.message}")
    return fit


def _require(value, flag):
    if value is None:
        raise ConfigError(f"this test needs {flag}")
    return value


def cmd_test(args) -> int:
    cfg = _config(args)
    cfg, spec, reals = _load(args, cfg, keep_marks=args.test == "zscore")
    tc = cfg.test
    which = args.test
    qq_rows = None
    if which == "gof":
        if len(reals) < 2:
            raise RequiresRepetitions("the goodness-of-fit test needs several repetitions (event files)")
        kw = _fit_kwargs(cfg)
        kw.pop("seed")
        rep = gof_subsample_test(reals, spec, p_of_n=tc.p_of_n, num_subsets=tc.num_subsets, xi=tc.xi,
                                 alpha=tc.alpha, seed=cfg.seed, jobs=cfg.jobs, band_mc=tc.band_mc,
                                 **({"pooled": True} if tc.pooled else {}), **kw)
        body = rep.to_dict()
        qq_rows = [["gof", *row] for row in qq_uniform(rep.per_subset_pvalues, rep.band).tolist()]
    elif which == "residuals":
        real = _single(reals, "residuals")
        params = cfg.params.to_params() if cfg.params is not None else _fit_single(spec, real, cfg).params
        res = residual_diagnostics(params, spec, real)
        body = res.to_dict()
        body["parameters_fitted_on_same_data"] = cfg.params is None
        qq_rows = []
        for label, pts in [(f"component_{i + 1}", q) for i, q in enumerate(res.qq)]:
            if len(pts) == 0:
                continue
            band = uniform_band(len(pts), tc.alpha, tc.band_mc)
            # exponential order statistics are -log(1 - U) of uniform ones
            qq_rows += [[label, t, e, -math.log1p(-lo), -math.log1p(-hi)]
                        for (t, e), lo, hi in zip(pts.tolist(), band.lower, band.upper)]
    else:
        real = _single(reals, f"test {which}")
        if which == "zscore":
            if spec.marked:
                raise ConfigError("zscore takes the unmarked model in 'model'; choose the marked link with --link")
            if real.marks is None:
                raise DataError("zscore needs a mark column in the event file")
            marked = spec.with_link(tc.marked_link)
            unmarked_fit = _fit_single(spec, real.without_marks(), cfg)
            rep = test_mark_zscore(real, spec, marked, alpha=tc.alpha, fit=unmarked_fit,
                                   information=tc.information)
        else:
            coef = _require(tc.coefficient, "--index")
            fit = _fit_single(spec, real, cfg)
            if which == "coef":
                rep = test_single_coefficient(fit, coef, _require(tc.null, "--null"), tc.alpha, tc.alternative)
            elif which == "equality":
                rep = test_coefficient_equality(fit, coef, _require(tc.coefficient_j, "--index-j"), tc.alpha)
            else:
                rep = test_bootstrap_coefficient(real, spec, coef, _require(tc.null, "--null"),
                                                 B=tc.bootstrap_draws, alpha=tc.alpha, seed=cfg.seed,
                                                 jobs=cfg.jobs, fit=fit)
        body = rep.to_dict()
    if args.qq_out is not None:
        if qq_rows is None:
            print(f"note: test {which} yields a single statistic; no QQ data written", file=sys.stderr)
        else:
            write_table(args.qq_out, QQ_HEADER, qq_rows)
    prov = _provenance(cfg, f"test {which}", {"files": [str(f) for f in args.files]})
    _emit({"provenance": prov, "test": which, "report": body}, args, f"test_{which}.json")
    return EXIT_OK


def _parse_overrides(items):
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        out[key.strip()] = tuple(val) if isinstance(val, list) else val
    return out


def cmd_experiment(args) -> int:
    cfg = _config(args)
    overrides = dict(cfg.experiment)
    overrides.update(_parse_overrides(args.set))
    if args.seed is not None:
        overrides["seed"] = args.seed
    if cfg.jobs is not None:
        overrides["jobs"] = cfg.jobs
    out = args.out if args.out is not None else Path("results") / args.name
    res = run_experiment(args.name, None, **overrides)
    prov = _provenance(cfg, f"experiment {args.name}",
                       {"overrides": {k: v for k, v in overrides.items() if k != "jobs"}})
    prov["seed"] = overrides.get("seed", experiment_options(args.name)["seed"])
    res.summary["provenance"] = prov
    paths = res.write(out)
    if args.qq_out is not None and "qq" in res.tables:
        write_table(args.qq_out, *res.tables["qq"])
    print(json.dumps({"experiment": args.name, "files": [str(p) for p in paths]}, indent=2))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "test": cmd_test, "experiment": cmd_experiment}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except HawkesError as exc:
        code, kind = _classify(exc)
        message = str(exc)
    except OSError as exc:
        code, kind, message = EXIT_DATA, "data error", str(exc)
    print(f"hawkes-lab: {kind}: {message}", file=sys.stderr)
    return code


def _classify(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG, "config error"
    if isinstance(exc, (DataError, DomainError)):
        return EXIT_DATA, "data error"
    return EXIT_NUMERIC, "numerical failure"

if __name__ == "__main__":
    sys.exit(main())
