"""Log-likelihood, gradients, maximum-likelihood fitting and Fisher estimates."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import partial
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import _kernels as K
from ._parallel import pmap
from .core import HawkesParams, ModelSpec, Realization, link_arrays
from .errors import (
    DataError,
    EmptyComponent,
    HawkesError,
    InvalidParams,
    InvalidSpec,
    MissingMark,
    NonFiniteLikelihood,
    NonPositiveVariance,
    SingularFisher,
    SpecMismatch,
)
from .simulate import make_rng

EPS = np.finfo(float).eps
GTOL = 1e-8
COND_MAX = 1e12
MAX_RESTARTS = 10


class ParamLayout:
    """Ordering of the free parameters of a model.

    Names are 1-based (``m[1]``, ``a[1,2]``, ``b[1]``, ``gamma[1,1]``,
    ``psi``).  In one dimension the bare names ``m``, ``a``, ``b``, ``gamma``
    are accepted as aliases.  ``psi`` is a free parameter only for
    normalized mark links, where it enters the intensity.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        d = spec.dim
        ent = [("m", (i,)) for i in range(d)]
        if not spec.baseline_only:
            ent += [("a", (i, j)) for i in range(d) for j in range(d)]
            if spec.b_structure == "full":
                ent += [("b", (i, j)) for i in range(d) for j in range(d)]
            else:
                ent += [("b", (i,)) for i in range(d)]
            if spec.marked:
                if spec.gamma_structure == "full":
                    ent += [("gamma", (i, j)) for i in range(d) for j in range(d)]
                elif spec.gamma_structure == "receiver":
                    ent += [("gamma", (i,)) for i in range(d)]
                else:
                    ent += [("gamma", ())]
            if spec.normalized:
                ent.append(("psi", ()))
        self.entries = ent
        self.names = [self._name(k, idx) for k, idx in ent]
        self.kinds = np.array([k for k, _ in ent])
        self._projection = self._build_projection()

    @staticmethod
    def _name(kind, idx):
        if not idx:
            return kind
        return f"{kind}[{','.join(str(i + 1) for i in idx)}]"

    def __len__(self):
        return len(self.entries)

    def index(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < len(self):
                raise InvalidSpec(f"parameter index {name} out of range")
            return int(name)
        key = str(name).replace(" ", "")
        if key in self.names:
            return self.names.index(key)
        if self.spec.dim == 1:
            for suffix in ("[1]", "[1,1]"):
                if key + suffix in self.names:
                    return self.names.index(key + suffix)
        raise InvalidSpec(f"unknown parameter {name!r}; expected one of {self.names}")

    def indices(self, kind) -> np.ndarray:
        return np.flatnonzero(self.kinds == kind)

    def _build_projection(self):
        # maps the kernel's full gradient layout onto the free parameters
        d = self.spec.dim
        nfull = d + 3 * d * d + 1
        P = np.zeros((nfull, len(self)))
        for col, (kind, idx) in enumerate(self.entries):
            if kind == "m":
                P[idx[0], col] = 1
            elif kind == "a":
                P[d + idx[0] * d + idx[1], col] = 1
            elif kind == "b":
                rows = [idx] if len(idx) == 2 else [(idx[0], j) for j in range(d)]
                for i, j in rows:
                    P[d + d * d + i * d + j, col] = 1
            elif kind == "gamma":
                if len(idx) == 2:
                    rows = [idx]
                elif len(idx) == 1:
                    rows = [(idx[0], j) for j in range(d)]
                else:
                    rows = [(i, j) for i in range(d) for j in range(d)]
                for i, j in rows:
                    P[d + 2 * d * d + i * d + j, col] = 1
            else:
                P[nfull - 1, col] = 1
        return P

    def reduce(self, full_grad) -> np.ndarray:
        return self._projection.T @ full_grad

    def to_params(self, theta, psi=None) -> HawkesParams:
        d = self.spec.dim
        theta = np.asarray(theta, dtype=float)
        m = np.zeros(d)
        a = np.zeros((d, d))
        b = np.ones(d) if self.spec.b_structure == "receiver" else np.ones((d, d))
        gamma = np.zeros((d, d)) if self.spec.marked else None
        for v, (kind, idx) in zip(theta, self.entries):
            if kind == "m":
                m[idx] = v
            elif kind == "a":
                a[idx] = v
            elif kind == "b":
                b[idx] = v
            elif kind == "gamma":
                if len(idx) == 2:
                    gamma[idx] = v
                elif len(idx) == 1:
                    gamma[idx[0], :] = v
                else:
                    gamma[:, :] = v
            else:
                psi = v
        return HawkesParams(m=m, a=a, b=b, gamma=gamma, psi=psi)

    def from_params(self, params: HawkesParams) -> np.ndarray:
        b = params.b_vector() if self.spec.b_structure == "receiver" else params.b_matrix()
        g = params.gamma_matrix()
        out = []
        for kind, idx in self.entries:
            if kind == "m":
                out.append(params.m[idx])
            elif kind == "a":
                out.append(params.a[idx])
            elif kind == "b":
                out.append(b[idx])
            elif kind == "gamma":
                out.append(g[idx] if len(idx) == 2 else (g[idx[0], 0] if idx else g[0, 0]))
            else:
                out.append(params.psi)
        return np.array(out, dtype=float)


@dataclass
class _Data:
    history: Realization
    eval_times: np.ndarray
    eval_comps: np.ndarray
    horizon: float
    include_marks: bool


def _data_for(real: Realization, include_marks: bool) -> _Data:
    return _Data(real, real.times, real.components, real.horizon, include_marks)


def _check_data(spec: ModelSpec, real: Realization):
    if real.dim != spec.dim:
        raise SpecMismatch(f"data dimension {real.dim} does not match model {spec.dim}")
    if spec.marked and real.marks is None:
        raise MissingMark("marked model but the data carry no marks")


def _mark_term(params, real):
    n = real.n_events
    s = float(real.marks.sum())
    psi = params.psi
    return n * math.log(psi) - psi * s, n / psi - s


def _eval(spec, params: HawkesParams, data: _Data, with_grad: bool):
    """Log-likelihood and, when asked, its gradient in the full layout."""
    h = data.history
    d = spec.dim
    if spec.marked:
        phi, dg, dp = link_arrays(spec, params, h, with_grad=True)
    else:
        phi = np.ones((h.n_events, d))
        dg = dp = phi
    if spec.nonlinear and not with_grad:
        ll = K.nonlinear_loglik(h.times, h.components, np.ascontiguousarray(phi), params.m,
                                np.array(params.a), params.b_vector(), data.eval_times,
                                data.eval_comps, data.horizon)
        full = None
    elif spec.nonlinear:
        ll, gm, ga, gb, gg, gpsi = K.nonlinear_loglik_grad(
            h.times, h.components, np.ascontiguousarray(phi), np.ascontiguousarray(dg),
            np.ascontiguousarray(dp), params.m, np.array(params.a), params.b_vector(),
            data.eval_times, data.eval_comps, data.horizon)
        full = np.concatenate([gm, ga.ravel(), gb.ravel(), gg.ravel(), [gpsi]])
    else:
        ll, gm, ga, gb, gg, gpsi = K.linear_loglik(
            h.times, h.components, np.ascontiguousarray(phi), np.ascontiguousarray(dg),
            np.ascontiguousarray(dp), params.m, np.array(params.a), params.b_matrix(),
            data.eval_times, data.eval_comps, data.horizon, with_grad)
        full = np.concatenate([gm, ga.ravel(), gb.ravel(), gg.ravel(), [gpsi]])
    if data.include_marks and spec.marked and np.isfinite(ll):
        v, g = _mark_term(params, h)
        ll += v
        if full is not None:
            full[-1] += g
    return ll, full


def _fd_step(x):
    return EPS ** (1 / 3) * max(1.0, abs(x))


class _Objective:
    """Log-likelihood over the free parameters of a layout, summed over data sets."""

    def __init__(self, spec, layout, data: Sequence[_Data], psi_fixed=None):
        self.spec = spec
        self.layout = layout
        self.data = list(data)
        self.psi_fixed = psi_fixed

    def params(self, theta):
        return self.layout.to_params(theta, psi=self.psi_fixed)

    def value(self, theta) -> float:
        try:
            p = self.params(theta)
        except HawkesError:
            return -math.inf
        return float(sum(_eval(self.spec, p, dt, False)[0] for dt in self.data))

    def value_grad(self, theta):
        try:
            p = self.params(theta)
        except HawkesError:
            return -math.inf, np.full(len(theta), np.nan)
        total, g = 0.0, np.zeros(len(self.layout))
        for dt in self.data:
            v, full = _eval(self.spec, p, dt, True)
            total += v
            if not np.isfinite(total):
                return -math.inf, np.full(len(theta), np.nan)
            g += self.layout.reduce(full)
        return total, g

    def hessian(self, theta):
        theta = np.asarray(theta, dtype=float)
        n = theta.size
        H = np.zeros((n, n))
        for k in range(n):
            h = _fd_step(theta[k])
            up, dn = theta.copy(), theta.copy()
            up[k] += h
            dn[k] -= h
            H[:, k] = (self.value_grad(up)[1] - self.value_grad(dn)[1]) / (2 * h)
        return 0.5 * (H + H.T)


# --------------------------------------------------------------------------
# public evaluation API


def _layout_psi(spec, params):
    return None if spec.normalized else params.psi


def log_likelihood(params: HawkesParams, spec: ModelSpec, realization: Realization,
                   include_mark_density: bool = False) -> float:
    params.validate_for(spec)
    _check_data(spec, realization)
    if include_mark_density and spec.marked and params.psi is None:
        raise InvalidParams("the mark density needs psi")
    return float(_eval(spec, params, _data_for(realization, include_mark_density), False)[0])


def log_likelihood_gradient(params: HawkesParams, spec: ModelSpec, realization: Realization,
                            include_mark_density: bool = False) -> np.ndarray:
    """Gradient over the free parameters, ordered as ``ParamLayout(spec).names``."""
    params.validate_for(spec)
    _check_data(spec, realization)
    layout = ParamLayout(spec)
    obj = _Objective(spec, layout, [_data_for(realization, include_mark_density)],
                     _layout_psi(spec, params))
    theta = layout.from_params(params)
    v, g = obj.value_grad(theta)
    if not np.isfinite(v) or not np.all(np.isfinite(g)):
        raise NonFiniteLikelihood("log-likelihood is not finite at these parameters")
    return g


def _cross_data(history, eval_times, eval_comps, T):
    eval_times = np.asarray(eval_times, dtype=float)
    if eval_comps is None:
        eval_comps = np.zeros(eval_times.size, dtype=np.int64)
    eval_comps = np.asarray(eval_comps, dtype=np.int64)
    if eval_times.size and np.any(np.diff(eval_times) < 0):
        order = np.argsort(eval_times, kind="stable")
        eval_times, eval_comps = eval_times[order], eval_comps[order]
    T = history.horizon if T is None else float(T)
    return _Data(history, eval_times, eval_comps, T, False)


def cross_log_likelihood(params, spec, history: Realization, eval_times, eval_comps=None, T=None):
    """Sum of log-intensities at ``eval_times`` minus the compensator on [0, T],
    with the intensity driven by ``history``."""
    params.validate_for(spec)
    _check_data(spec, history)
    return float(_eval(spec, params, _cross_data(history, eval_times, eval_comps, T), False)[0])


def cross_log_likelihood_gradient(params, spec, history, eval_times, eval_comps=None, T=None):
    params.validate_for(spec)
    _check_data(spec, history)
    layout = ParamLayout(spec)
    obj = _Objective(spec, layout, [_cross_data(history, eval_times, eval_comps, T)],
                     _layout_psi(spec, params))
    v, g = obj.value_grad(layout.from_params(params))
    if not np.isfinite(v):
        raise NonFiniteLikelihood("cross log-likelihood is not finite at these parameters")
    return g


# --------------------------------------------------------------------------
# fitting


@dataclass
class FitBounds:
    """Natural-scale bounds keyed by parameter name or kind (``"a"``, ``"b"``...)."""

    lower: dict = field(default_factory=dict)
    upper: dict = field(default_factory=dict)

    def resolve(self, layout: ParamLayout):
        spec = layout.spec
        lo = np.empty(len(layout))
        hi = np.empty(len(layout))
        for k, (kind, _) in enumerate(layout.entries):
            name = layout.names[k]
            if kind in ("m", "b", "psi"):
                dlo, dhi = 1e-10, 1e10
            elif kind == "a":
                dlo, dhi = (-math.inf if spec.nonlinear else 0.0), math.inf
            elif spec.link == "normpower":
                dlo, dhi = -1.0 + 1e-9, math.inf
            else:
                dlo, dhi = -math.inf, math.inf
            lo[k] = self.lower.get(name, self.lower.get(kind, dlo))
            hi[k] = self.upper.get(name, self.upper.get(kind, dhi))
            if not spec.nonlinear and kind == "a":
                lo[k] = max(lo[k], 0.0)
            if not lo[k] < hi[k]:
                raise InvalidParams(f"empty bounds for {name}")
        return lo, hi


@dataclass
class FitResult:
    params: HawkesParams
    log_lik: float
    fisher: np.ndarray
    converged: bool
    iterations: int
    gradient_norm: float
    spec: ModelSpec
    names: list
    horizon: float
    n_events: int
    history: list = field(default_factory=list)
    message: str = ""
    fixed: dict = field(default_factory=dict)

    @property
    def theta(self) -> np.ndarray:
        return ParamLayout(self.spec).from_params(self.params)

    def index(self, name) -> int:
        return ParamLayout(self.spec).index(name)

    def value(self, name) -> float:
        return float(self.theta[self.index(name)])

    def covariance(self) -> np.ndarray:
        """Inverse of the Fisher estimate (asymptotic covariance of sqrt(T)(theta_hat - theta))."""
        return fisher_inverse(self.fisher)

    def std_errors(self) -> np.ndarray:
        cov = self.covariance()
        var = np.diag(cov)
        if np.any(var <= 0):
            raise NonPositiveVariance("non-positive variance in the inverse Fisher matrix")
        return np.sqrt(var / self.horizon)

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "names": self.names,
            "theta": self.theta.tolist(),
            "log_lik": self.log_lik,
            "fisher": np.asarray(self.fisher).tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "horizon": self.horizon,
            "n_events": self.n_events,
            "model": self.spec.to_dict(),
            "message": self.message,
        }


def fisher_inverse(fisher, cond_max=COND_MAX) -> np.ndarray:
    fisher = np.atleast_2d(np.asarray(fisher, dtype=float))
    if not np.all(np.isfinite(fisher)):
        raise SingularFisher("Fisher estimate is not finite")
    s = np.linalg.svd(fisher, compute_uv=False)
    if s[-1] <= 0 or s[0] / s[-1] > cond_max:
        raise SingularFisher(f"Fisher estimate is ill-conditioned (condition {s[0] / max(s[-1], 1e-300):.3g})")
    return np.linalg.solve(fisher, np.eye(fisher.shape[0]))


class _Transform:
    """Optimizer coordinates: log for positive parameters, raw otherwise.

    For the normalized exponential link gamma < psi is kept by optimizing
    log(psi - gamma) instead of gamma.
    """

    def __init__(self, layout, lo, hi, free):
        self.layout = layout
        kinds = layout.kinds
        self.free = free
        self.logged = np.isin(kinds, ("m", "b", "psi"))
        self.gap = (kinds == "gamma") if layout.spec.link == "normexp" else np.zeros(len(kinds), bool)
        ipsi = layout.indices("psi")
        self.ipsi = int(ipsi[0]) if ipsi.size else None
        self.lo, self.hi = lo, hi

    def to_u(self, theta):
        u = np.array(theta, dtype=float)
        u[self.logged] = np.log(theta[self.logged])
        if self.gap.any():
            u[self.gap] = np.log(theta[self.ipsi] - theta[self.gap])
        return u[self.free]

    def to_theta(self, u, base):
        theta = np.array(base, dtype=float)
        vals = np.array(u, dtype=float)
        idx = np.flatnonzero(self.free)
        for k, v in zip(idx, vals):
            theta[k] = math.exp(min(v, 700.0)) if self.logged[k] else v
        if self.gap.any():
            for k, v in zip(idx, vals):
                if self.gap[k]:
                    theta[k] = theta[self.ipsi] - math.exp(min(v, 700.0))
        return theta

    def chain(self, theta, grad_theta):
        """Gradient in optimizer coordinates from the natural-scale gradient."""
        g = np.array(grad_theta, dtype=float)
        out = g.copy()
        out[self.logged] = g[self.logged] * theta[self.logged]
        if self.gap.any():
            gaps = theta[self.ipsi] - theta[self.gap]
            out[self.gap] = -g[self.gap] * gaps
            if self.free[self.ipsi]:
                out[self.ipsi] += theta[self.ipsi] * g[self.gap].sum()
        return out[self.free]

    def u_bounds(self):
        out = []
        for k in np.flatnonzero(self.free):
            lo, hi = self.lo[k], self.hi[k]
            if self.logged[k]:
                out.append((math.log(lo), math.log(hi) if np.isfinite(hi) else None))
            elif self.gap[k]:
                out.append((None, None))
            else:
                out.append((lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None))
        return out


def _moment_start(spec, layout, reals):
    d = spec.dim
    T = sum(r.horizon for r in reals)
    counts = sum(r.counts() for r in reals).astype(float)
    rate = counts / T
    b0 = float(np.clip(rate.sum(), 0.1, 10.0))
    theta = np.empty(len(layout))
    for k, (kind, idx) in enumerate(layout.entries):
        if kind == "m":
            theta[k] = 0.7 * rate[idx[0]] if not spec.baseline_only else rate[idx[0]]
        elif kind == "a":
            theta[k] = 0.3 * b0 / d
        elif kind == "b":
            theta[k] = b0
        elif kind == "gamma":
            theta[k] = 0.0
        else:
            theta[k] = _psi_hat(reals)
    return theta


def _psi_hat(reals):
    n = sum(r.n_events for r in reals)
    s = sum(float(r.marks.sum()) for r in reals)
    if s <= 0:
        raise DataError("marks must have a positive sum to estimate psi")
    return n / s


def _random_start(spec, layout, rng, psi0):
    theta = np.empty(len(layout))
    b_of_row = {}
    for k, (kind, idx) in enumerate(layout.entries):
        if kind == "b":
            theta[k] = math.exp(rng.uniform(math.log(0.1), math.log(10.0)))
            b_of_row[idx] = theta[k]
    for k, (kind, idx) in enumerate(layout.entries):
        if kind == "m":
            theta[k] = math.exp(rng.uniform(math.log(0.1), math.log(10.0)))
        elif kind == "a":
            bb = b_of_row.get(idx, b_of_row.get((idx[0],), 1.0))
            theta[k] = rng.uniform(-bb if spec.nonlinear else 0.0, 0.9 * bb)
        elif kind == "gamma":
            theta[k] = rng.uniform(-1.0, 1.0)
            if spec.link == "normexp":
                theta[k] = min(theta[k], psi0 - 0.1)
            if spec.link == "normpower":
                theta[k] = max(theta[k], -0.9)
        elif kind == "psi":
            theta[k] = psi0
    return theta


def _projected_grad(theta, g, lo, hi, free):
    pg = np.where(free, g, 0.0)
    at_lo = (theta <= lo + 1e-12) & (g < 0)
    at_hi = (theta >= hi - 1e-12) & (g > 0)
    pg[at_lo | at_hi] = 0.0
    return pg


def _feasible(theta, lo, hi, spec, layout):
    if np.any(theta < lo) or np.any(theta > hi):
        return False
    if spec.link == "normexp":
        ipsi = layout.indices("psi")[0]
        if np.any(theta[layout.indices("gamma")] >= theta[ipsi]):
            return False
    return True


def _newton_polish(obj, theta, lo, hi, free, scale, steps=8):
    """A few safeguarded Newton steps on the interior free parameters."""
    spec, layout = obj.spec, obj.layout
    f0, g = obj.value_grad(theta)
    for _ in range(steps):
        pg = _projected_grad(theta, g, lo, hi, free)
        if np.max(np.abs(pg), initial=0.0) / scale <= GTOL * 1e-2:
            break
        active = free & ~((theta <= lo + 1e-12) & (g <= 0)) & ~((theta >= hi - 1e-12) & (g >= 0))
        if not active.any():
            break
        idx = np.flatnonzero(active)
        H = obj.hessian(theta)[np.ix_(idx, idx)]
        if not np.all(np.isfinite(H)):
            break
        # Newton step on the negatively curved subspace only; flat directions
        # (e.g. a decay whose weight sits at zero) are left alone
        lam, V = np.linalg.eigh(H)
        keep = lam < -1e-10 * max(np.max(np.abs(lam)), 1e-300)
        if not keep.any():
            break
        Vk = V[:, keep]
        step = -Vk @ ((Vk.T @ g[idx]) / lam[keep])
        t = 1.0
        improved = False
        for _ in range(30):
            cand = theta.copy()
            cand[idx] += t * step
            if _feasible(cand, lo, hi, spec, layout):
                f1, g1 = obj.value_grad(cand)
                if np.isfinite(f1):
                    tol = max(1.0, abs(f0))
                    gain = np.max(np.abs(_projected_grad(cand, g1, lo, hi, free))) < np.max(np.abs(pg))
                    # near the optimum the value is dominated by rounding; a
                    # smaller gradient is then the better signal
                    if f1 >= f0 - 1e-12 * tol or (gain and f1 >= f0 - 1e-8 * tol):
                        improved = True
                        break
            t *= 0.5
        if not improved:
            break
        theta, f0, g = cand, f1, g1
    return theta, f0, g


def _optimize(obj, start, lo, hi, free, scale, maxiter):
    tr = _Transform(obj.layout, lo, hi, free)
    base = np.array(start, dtype=float)
    trace = []
    best = {"f": math.inf, "u": None}
    last = {}

    def wall(u):
        # Outside the domain of the likelihood. A quadratic bowl around the
        # last feasible point lets the line search interpolate its way back;
        # a bare huge value makes it collapse the step and stop.
        du = u - last["u"]
        height = max(1.0, abs(last["f"]))
        return last["f"] + height, 2.0 * height * du / max(du @ du, 1e-300)

    def fun(u):
        theta = tr.to_theta(u, base)
        if not _feasible(theta, lo, hi, obj.spec, obj.layout):
            return wall(u) if last else (math.inf, np.zeros_like(u))
        v, g = obj.value_grad(theta)
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return wall(u) if last else (math.inf, np.zeros_like(u))
        f = -v / scale
        last["u"], last["f"] = np.array(u), f
        if f < best["f"]:
            best["f"], best["u"] = f, np.array(u)
        return f, -tr.chain(theta, g) / scale

    u0 = tr.to_u(base)
    if not np.isfinite(fun(u0)[0]):
        return None
    res = minimize(fun, u0, jac=True, method="L-BFGS-B", bounds=tr.u_bounds(),
                   callback=lambda u: trace.append(-fun(u)[0] * scale),
                   options={"maxiter": maxiter, "maxfun": 5 * maxiter, "ftol": 1e-15,
                            "gtol": 1e-12, "maxcor": 20})
    u = best["u"] if best["u"] is not None else res.x
    theta = tr.to_theta(u, base)
    return theta, int(res.nit), trace, str(res.message)


def _as_list(realizations):
    if isinstance(realizations, Realization):
        return [realizations]
    reals = list(realizations)
    if not reals:
        raise DataError("no data to fit")
    return reals


def _stationary(theta, g, lo, hi, free, scale):
    return np.max(np.abs(_projected_grad(theta, g, lo, hi, free)), initial=0.0) / scale <= GTOL


def _run_fit(obj, starts, lo, hi, free, fixed_idx, scale, maxiter):
    """Best L-BFGS-B run over the starts, then alternating Newton polish and
    fresh L-BFGS-B runs until the gradient test passes or nothing improves."""
    spec, layout = obj.spec, obj.layout
    best = None
    for s in starts:
        s = np.clip(s, lo, hi)
        for k, v in fixed_idx.items():
            s[k] = v
        if spec.link == "normexp":
            ipsi = layout.indices("psi")[0]
            gi = layout.indices("gamma")
            s[gi] = np.minimum(s[gi], s[ipsi] - 0.1)
        out = _optimize(obj, s, lo, hi, free, scale, maxiter)
        if out is None:
            continue
        theta, nit, trace, msg = out
        v = obj.value(theta)
        if best is None or v > best[1]:
            best = (theta, v, nit, trace, msg)
    if best is None:
        raise NonFiniteLikelihood("log-likelihood is not finite at any starting point")
    theta, _, nit, trace, msg = best
    # L-BFGS-B can stall where its line search runs into the log barrier of
    # an event intensity near zero; a restart resets its curvature memory
    for restart in range(MAX_RESTARTS + 1):
        theta, ll, g = _newton_polish(obj, theta, lo, hi, free, scale)
        if not np.isfinite(ll) or _stationary(theta, g, lo, hi, free, scale):
            break
        if restart == MAX_RESTARTS:
            break
        again = _optimize(obj, theta, lo, hi, free, scale, maxiter)
        if again is None or not obj.value(again[0]) > ll + 1e-12 * max(1.0, abs(ll)):
            break
        theta = again[0]
        nit += again[1]
        trace += again[2]
        msg = again[3]
    pg = _projected_grad(theta, g, lo, hi, free)
    gnorm = float(np.max(np.abs(pg), initial=0.0))
    converged = bool(np.isfinite(ll) and gnorm / scale <= GTOL)
    return theta, ll, gnorm, converged, nit, trace, msg


def _free_mask(layout, fixed):
    free = np.ones(len(layout), dtype=bool)
    fixed_idx = {}
    for name, val in (fixed or {}).items():
        k = layout.index(name)
        fixed_idx[k] = float(val)
        free[k] = False
    return free, fixed_idx


def fit_mle(spec: ModelSpec, realizations, init: Optional[HawkesParams] = None,
            bounds: Optional[FitBounds] = None, multistart: int = 5, seed: int = 0,
            fixed: Optional[dict] = None, maxiter: int = 2000,
            fisher: str = "hessian") -> FitResult:
    """Maximum-likelihood fit.  A list of realizations is fitted jointly
    (pooled likelihood, horizons added for the Fisher scaling).

    ``fixed`` maps parameter names to values held constant.  Start 0 is
    ``init`` if given, else a moment-based guess; the remaining
    ``multistart - 1`` starts are random draws.
    """
    reals = _as_list(realizations)
    for r in reals:
        _check_data(spec, r)
    counts = sum(r.counts() for r in reals)
    if np.any(counts == 0):
        empty = [i + 1 for i in np.flatnonzero(counts == 0)]
        raise EmptyComponent(f"component(s) {empty} have no events; their parameters are not identifiable")
    T = float(sum(r.horizon for r in reals))
    N = int(counts.sum())
    layout = ParamLayout(spec)
    psi_sep = None
    if spec.marked and not spec.normalized:
        psi_sep = _psi_hat(reals)

    if spec.baseline_only and not fixed:
        m = counts / T
        params = HawkesParams.poisson(m)
        ll = float(np.sum(counts * np.log(m)) - m.sum() * T)
        fisher_mat = np.diag(counts / (T * m ** 2))
        return FitResult(params, ll, fisher_mat, True, 0, 0.0, spec, layout.names, T, N,
                         message="closed form")

    include_marks = spec.normalized
    obj = _Objective(spec, layout, [_data_for(r, include_marks) for r in reals], psi_sep)
    lo, hi = (bounds or FitBounds()).resolve(layout)
    fixed = dict(fixed or {})
    free, fixed_idx = _free_mask(layout, fixed)

    rng = make_rng(seed)
    psi0 = _psi_hat(reals) if spec.normalized else None
    starts = [layout.from_params(init) if init is not None else _moment_start(spec, layout, reals)]
    for _ in range(max(multistart, 1) - 1):
        starts.append(_random_start(spec, layout, rng, psi0))
    scale = max(N, 1)

    theta, ll, gnorm, converged, nit, trace, msg = _run_fit(
        obj, starts, lo, hi, free, fixed_idx, scale, maxiter)
    params = obj.params(theta)
    if psi_sep is not None:
        params = params.replace(psi=psi_sep)
    if spec.marked and not spec.normalized:
        ll += sum(_mark_term(params, r)[0] for r in reals)
    result = FitResult(params, float(ll), np.zeros((len(layout), len(layout))), converged, nit,
                       gnorm, spec, layout.names, T, N, trace, msg, fixed)
    result.fisher = _fisher(obj, theta, T, reals, kind=fisher)
    return result


def fit_cross(spec: ModelSpec, history: Realization, eval_times, eval_comps=None, init=None,
              fixed: Optional[dict] = None, bounds: Optional[FitBounds] = None,
              maxiter: int = 2000) -> FitResult:
    """Maximize the cross log-likelihood (intensity driven by ``history``,
    evaluated at ``eval_times``) from a single start, by default ``init``."""
    _check_data(spec, history)
    layout = ParamLayout(spec)
    data = _cross_data(history, eval_times, eval_comps, None)
    psi = None
    if spec.marked:
        if init is None or init.psi is None:
            raise InvalidParams("marked cross fits need a starting point carrying psi")
        if not spec.normalized:
            psi = init.psi
    obj = _Objective(spec, layout, [data], psi)
    lo, hi = (bounds or FitBounds()).resolve(layout)
    free, fixed_idx = _free_mask(layout, fixed)
    N = int(data.eval_times.size)
    counts = np.bincount(data.eval_comps, minlength=spec.dim) + history.counts()
    if init is None:
        start = _moment_start(spec, layout, [history])
    else:
        start = layout.from_params(init)
    if np.any(counts == 0):
        raise EmptyComponent("a component has no events")
    theta, ll, gnorm, converged, nit, trace, msg = _run_fit(
        obj, [start], lo, hi, free, fixed_idx, max(N, 1), maxiter)
    params = obj.params(theta)
    return FitResult(params, float(ll), np.zeros((len(layout), len(layout))), converged, nit,
                     gnorm, spec, layout.names, data.horizon, N, trace, msg, dict(fixed or {}))


def _fisher(obj, theta, T, reals, kind="hessian"):
    if kind == "outer":
        return _outer_fisher(obj, theta, T, reals)
    return -obj.hessian(theta) / T


def _outer_fisher(obj, theta, T, reals):
    spec, layout = obj.spec, obj.layout
    if spec.nonlinear:
        raise InvalidSpec("the outer-product Fisher estimate is only available for linear models")
    p = obj.params(theta)
    total = np.zeros((len(layout), len(layout)))
    for r in reals:
        if spec.marked:
            phi, dg, dp = link_arrays(spec, p, r, with_grad=True)
        else:
            phi = dg = dp = np.ones((r.n_events, spec.dim))
        rows = K.linear_score_rows(r.times, r.components, np.ascontiguousarray(phi),
                                   np.ascontiguousarray(dg), np.ascontiguousarray(dp), p.m,
                                   np.array(p.a), p.b_matrix(), r.times, r.components)
        if spec.normalized:
            rows[:, -1] += 1.0 / p.psi - r.marks
        free_rows = rows @ layout._projection
        total += free_rows.T @ free_rows
    return total / T


def fisher_estimate(fit: FitResult, spec: ModelSpec, realizations, kind: str = "hessian"):
    """-(1/T) times the Hessian at the fit (or the outer-product form)."""
    reals = _as_list(realizations)
    layout = ParamLayout(spec)
    psi = None if spec.normalized else fit.params.psi
    obj = _Objective(spec, layout, [_data_for(r, spec.normalized) for r in reals], psi)
    T = float(sum(r.horizon for r in reals))
    return _fisher(obj, layout.from_params(fit.params), T, reals, kind)


def total_fisher(params: HawkesParams, spec: ModelSpec, realization: Realization,
                 include_mark_density: bool = True) -> np.ndarray:
    """Unscaled negative Hessian of the log-likelihood at ``params``."""
    layout = ParamLayout(spec)
    obj = _Objective(spec, layout, [_data_for(realization, include_mark_density)],
                     _layout_psi(spec, params))
    return -obj.hessian(layout.from_params(params))


def total_outer_fisher(params: HawkesParams, spec: ModelSpec, realization: Realization) -> np.ndarray:
    """Unscaled sum of outer products of per-event scores (linear models).

    Positive semi-definite by construction, unlike the observed information
    away from the maximum.
    """
    layout = ParamLayout(spec)
    obj = _Objective(spec, layout, [_data_for(realization, spec.normalized)],
                     _layout_psi(spec, params))
    return _outer_fisher(obj, layout.from_params(params), 1.0, [realization])


# --------------------------------------------------------------------------
# repetitions


@dataclass
class RepetitionFits:
    per_rep: list
    mean_params: Optional[HawkesParams]
    used: list
    failed: list

    @property
    def failure_rate(self) -> float:
        n = len(self.per_rep)
        return len(self.failed) / n if n else 0.0


def _safe_fit(spec, kwargs, real):
    try:
        return fit_mle(spec, real, **kwargs)
    except HawkesError as exc:
        return exc


def fit_repetitions(spec: ModelSpec, realizations: Sequence[Realization], bounds=None,
                    jobs=None, **kwargs) -> RepetitionFits:
    """Independent fits; the mean is taken over converged fits only."""
    kwargs = dict(kwargs, bounds=bounds)
    fits = pmap(partial(_safe_fit, spec, kwargs), realizations, jobs)
    used = [k for k, f in enumerate(fits) if isinstance(f, FitResult) and f.converged]
    failed = [k for k in range(len(fits)) if k not in set(used)]
    if failed:
        warnings.warn(f"{len(failed)} of {len(fits)} fits failed or did not converge; "
                      "they are excluded from the mean", RuntimeWarning, stacklevel=2)
    mean = None
    if used:
        layout = ParamLayout(spec)
        thetas = np.array([layout.from_params(fits[k].params) for k in used])
        # sorting first makes the mean independent of the order of the repetitions
        theta = np.sort(thetas, axis=0).mean(axis=0)
        psi = None
        if spec.marked and not spec.normalized:
            psi = float(np.mean(np.sort([fits[k].params.psi for k in used])))
        mean = layout.to_params(theta, psi=psi)
    return RepetitionFits(fits, mean, used, failed)
