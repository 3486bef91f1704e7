"""Shared record of acceptance verdicts, printed by the terminal-summary hook."""

TITLES = {
    1: "compensators agree with adaptive quadrature",
    2: "analytic gradient agrees with finite differences",
    3: "stationary event rate reproduced",
    4: "MLE consistency and asymptotic normality",
    5: "Wald test calibration and Poisson-data failure",
    6: "GoF separates Poisson and Hawkes data",
    7: "nonlinear GoF and linear over-acceptance",
    8: "mark tests and model comparison",
    9: "residual bias versus subsampled GoF",
    10: "property suite passes within time limits",
}

DETAILS: dict = {}


def note(criterion: int, **values) -> None:
    DETAILS.setdefault(criterion, {}).update(values)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def summary_line(criterion: int, passed: bool) -> str:
    extra = ", ".join(f"{k}={_fmt(v)}" for k, v in DETAILS.get(criterion, {}).items())
    verdict = "PASS" if passed else "FAIL"
    return f"criterion {criterion:>2} {verdict}: {TITLES[criterion]}" + (f" [{extra}]" if extra else "")
