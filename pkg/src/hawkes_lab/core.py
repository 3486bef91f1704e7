"""Model specification, parameters, event data and the closed-form quantities
(intensity, compensator, time change) of exponential Hawkes processes.

Components are 0-based throughout the Python API.  ``a[i, j]`` is the effect
of an event of component ``j`` on the intensity of component ``i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import gammaln, psi as digamma

from . import _kernels as K
from .errors import (
    DataError,
    InvalidNormalization,
    InvalidParams,
    InvalidSpec,
    MissingMark,
    NonLinearSpec,
    NonPositiveMark,
    PerReceiverRequired,
)

LINKS = ("none", "exp", "power", "normexp", "normpower")
NORMALIZED_LINKS = ("normexp", "normpower")
_LINK_KIND = {"none": K.LINK_NONE, "exp": K.LINK_EXP, "power": K.LINK_POWER,
              "normexp": K.LINK_EXP, "normpower": K.LINK_POWER}


@dataclass(frozen=True)
class ModelSpec:
    """Which member of the nested model family is in force.

    ``link`` is one of ``none`` (unmarked), ``exp`` (e^{gx}), ``power`` (x^g),
    ``normexp`` ((psi-g)/psi e^{gx}) and ``normpower`` (c x^g with
    E[phi(kappa)] = 1 under Exponential(psi) marks).  ``gamma_structure`` ties
    mark parameters: ``full`` (d*d), ``receiver`` (gamma_ij = gamma_i) or
    ``shared`` (one gamma).
    """

    dim: int = 1
    linearity: str = "linear"
    baseline_only: bool = False
    link: str = "none"
    b_structure: str = "receiver"
    gamma_structure: str = "full"

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidSpec("dimension must be >= 1")
        if self.linearity not in ("linear", "nonlinear"):
            raise InvalidSpec(f"unknown linearity {self.linearity!r}")
        if self.link not in LINKS:
            raise InvalidSpec(f"unknown mark link {self.link!r}")
        if self.b_structure not in ("full", "receiver"):
            raise InvalidSpec(f"unknown b structure {self.b_structure!r}")
        if self.gamma_structure not in ("full", "receiver", "shared"):
            raise InvalidSpec(f"unknown gamma structure {self.gamma_structure!r}")
        if self.nonlinear and self.b_structure != "receiver":
            raise PerReceiverRequired("nonlinear models need per-receiver decays")
        if self.baseline_only and self.link != "none":
            raise InvalidSpec("a Poisson (baseline-only) model cannot be marked")

    @property
    def nonlinear(self) -> bool:
        return self.linearity == "nonlinear"

    @property
    def marked(self) -> bool:
        return self.link != "none"

    @property
    def normalized(self) -> bool:
        return self.link in NORMALIZED_LINKS

    @classmethod
    def poisson(cls, dim=1):
        return cls(dim=dim, baseline_only=True)

    def with_link(self, link, gamma_structure=None):
        return ModelSpec(self.dim, self.linearity, self.baseline_only, link,
                         self.b_structure, gamma_structure or self.gamma_structure)

    def label(self) -> str:
        if self.baseline_only:
            return f"poisson(d={self.dim})"
        parts = [self.linearity, f"d={self.dim}"]
        if self.marked:
            parts.append(f"link={self.link}")
        return "hawkes(" + ",".join(parts) + ")"

    def to_dict(self):
        return {"dimension": self.dim, "linearity": self.linearity,
                "baseline_only": self.baseline_only, "mark_link": self.link,
                "b_structure": self.b_structure,
                "gamma_structure": self.gamma_structure}

    @classmethod
    def from_dict(cls, d):
        return cls(dim=d.get("dimension", 1), linearity=d.get("linearity", "linear"),
                   baseline_only=d.get("baseline_only", False),
                   link=d.get("mark_link", "none"),
                   b_structure=d.get("b_structure", "receiver"),
                   gamma_structure=d.get("gamma_structure", "full"))


def _frozen(x, dtype=float):
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HawkesParams:
    """Parameter set theta = (m, a, b, gamma) plus the mark rate psi.

    ``b`` is either a length-d vector (per-receiver decays) or a d x d matrix.
    """

    m: np.ndarray
    a: np.ndarray
    b: np.ndarray
    gamma: Optional[np.ndarray] = None
    psi: Optional[float] = None

    def __post_init__(self):
        m = _frozen(np.atleast_1d(self.m))
        d = m.shape[0]
        a = _frozen(np.reshape(self.a, (d, d)))
        b = np.asarray(self.b, dtype=float)
        b = _frozen(b.reshape(d) if b.size == d and b.ndim <= 1 else b.reshape(d, d))
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if self.gamma is not None:
            object.__setattr__(self, "gamma", _frozen(np.reshape(self.gamma, (d, d))))
        if self.psi is not None:
            object.__setattr__(self, "psi", float(self.psi))
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise InvalidParams("baseline rates m must be finite and > 0")
        if not np.all(np.isfinite(b)) or np.any(b <= 0):
            raise InvalidParams("decay rates b must be finite and > 0")
        if not np.all(np.isfinite(a)):
            raise InvalidParams("interaction weights a must be finite")
        if self.psi is not None and not self.psi > 0:
            raise InvalidParams("mark rate psi must be > 0")

    @property
    def dim(self) -> int:
        return self.m.shape[0]

    def b_matrix(self) -> np.ndarray:
        if self.b.ndim == 1:
            return np.repeat(self.b[:, None], self.dim, axis=1)
        return np.array(self.b)

    def b_vector(self) -> np.ndarray:
        if self.b.ndim == 1:
            return np.array(self.b)
        if not np.allclose(self.b, self.b[:, :1]):
            raise PerReceiverRequired("decay matrix is not constant per receiver")
        return np.array(self.b[:, 0])

    def gamma_matrix(self) -> np.ndarray:
        if self.gamma is None:
            return np.zeros((self.dim, self.dim))
        return np.array(self.gamma)

    def replace(self, **kw) -> "HawkesParams":
        cur = dict(m=self.m, a=self.a, b=self.b, gamma=self.gamma, psi=self.psi)
        cur.update(kw)
        return HawkesParams(**cur)

    @classmethod
    def poisson(cls, m):
        m = np.atleast_1d(np.asarray(m, dtype=float))
        return cls(m=m, a=np.zeros((m.size, m.size)), b=np.ones(m.size))

    def validate_for(self, spec: ModelSpec) -> None:
        if self.dim != spec.dim:
            raise InvalidParams(f"parameters have dimension {self.dim}, model {spec.dim}")
        if spec.baseline_only and np.any(self.a != 0):
            raise InvalidParams("Poisson model requires a = 0")
        if not spec.nonlinear and np.any(self.a < 0):
            raise InvalidParams("linear model requires a >= 0 (use a nonlinear spec)")
        if spec.nonlinear:
            self.b_vector()
        if spec.marked and spec.normalized and self.psi is None:
            raise InvalidParams("normalized mark links need psi")
        if spec.marked:
            link_constants(spec.link, self.gamma_matrix(), self.psi)

    def to_dict(self):
        out = {"m": self.m.tolist(), "a": self.a.tolist(), "b": self.b.tolist()}
        if self.gamma is not None:
            out["gamma"] = self.gamma.tolist()
        if self.psi is not None:
            out["psi"] = self.psi
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(m=d["m"], a=d["a"], b=d["b"], gamma=d.get("gamma"), psi=d.get("psi"))

    def __repr__(self):
        s = f"HawkesParams(m={self.m.tolist()}, a={self.a.tolist()}, b={self.b.tolist()}"
        if self.gamma is not None:
            s += f", gamma={self.gamma.tolist()}"
        if self.psi is not None:
            s += f", psi={self.psi:g}"
        return s + ")"


class MarkedEvent(NamedTuple):
    time: float
    component: int
    mark: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Realization:
    """One observed path on [0, horizon]: strictly increasing event times."""

    times: np.ndarray
    components: np.ndarray
    horizon: float
    dim: int = 1
    marks: Optional[np.ndarray] = None

    def __post_init__(self):
        t = _frozen(np.atleast_1d(np.asarray(self.times, dtype=float)).ravel())
        c = _frozen(np.atleast_1d(np.asarray(self.components, dtype=np.int64)).ravel(), np.int64)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "components", c)
        object.__setattr__(self, "horizon", float(self.horizon))
        if self.marks is not None:
            mk = _frozen(np.atleast_1d(np.asarray(self.marks, dtype=float)).ravel())
            object.__setattr__(self, "marks", mk)
            if mk.shape != t.shape:
                raise DataError("marks and times differ in length")
            if not np.all(np.isfinite(mk)):
                raise DataError("marks must be finite")
        if not self.horizon > 0:
            raise DataError("horizon must be > 0")
        if t.shape != c.shape:
            raise DataError("times and components differ in length")
        if t.size:
            if not np.all(np.isfinite(t)) or t[0] <= 0 or t[-1] > self.horizon:
                raise DataError("event times must lie in (0, horizon]")
            if np.any(np.diff(t) <= 0):
                raise DataError("event times must be strictly increasing (ties are rejected)")
            if c.min() < 0 or c.max() >= self.dim:
                raise DataError(f"components must lie in 0..{self.dim - 1}")

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    @property
    def marked(self) -> bool:
        return self.marks is not None

    def counts(self) -> np.ndarray:
        return np.bincount(self.components, minlength=self.dim)

    def component_times(self, i: int) -> np.ndarray:
        return self.times[self.components == i]

    def events(self):
        mk = self.marks if self.marks is not None else [None] * self.n_events
        return [MarkedEvent(float(t), int(c), None if k is None else float(k))
                for t, c, k in zip(self.times, self.components, mk)]

    def mark_array(self) -> np.ndarray:
        return np.zeros(self.n_events) if self.marks is None else np.asarray(self.marks)

    def without_marks(self) -> "Realization":
        return Realization(self.times, self.components, self.horizon, self.dim)

    def equals(self, other: "Realization") -> bool:
        if self.dim != other.dim or self.horizon != other.horizon:
            return False
        if not (np.array_equal(self.times, other.times)
                and np.array_equal(self.components, other.components)):
            return False
        if (self.marks is None) != (other.marks is None):
            return False
        return self.marks is None or np.array_equal(self.marks, other.marks)

    @classmethod
    def from_events(cls, events: Sequence[MarkedEvent], horizon, dim=1, jitter=False):
        events = list(events)
        times = [e.time for e in events]
        comps = [e.component for e in events]
        marks = [e.mark for e in events]
        if any(mk is None for mk in marks):
            if any(mk is not None for mk in marks):
                raise MissingMark("some events carry a mark and others do not")
            marks = None
        return cls.from_unsorted(times, comps, horizon, dim, marks, jitter=jitter)

    @classmethod
    def from_unsorted(cls, times, components, horizon, dim=1, marks=None, jitter=False):
        """Sort events by time.  Ties raise unless ``jitter`` is set, in which
        case tied events are pushed apart by 1e-9 times the mean gap."""
        t = np.asarray(times, dtype=float)
        c = np.asarray(components, dtype=np.int64)
        order = np.argsort(t, kind="stable")
        t, c = t[order], c[order]
        mk = None if marks is None else np.asarray(marks, dtype=float)[order]
        if t.size > 1 and np.any(np.diff(t) <= 0):
            if not jitter:
                raise DataError("tied event times; pass jitter=True to perturb them")
            eps = 1e-9 * float(horizon) / max(t.size, 1)
            for k in range(1, t.size):
                if t[k] <= t[k - 1]:
                    t[k] = t[k - 1] + eps
        return cls(t, c, horizon, dim, mk)


class IntensityState:
    """Decayed excitation S_ij at ``last_time`` (right limit)."""

    def __init__(self, last_time, S, m, bmat):
        self.last_time = float(last_time)
        self.S = np.array(S, dtype=float)
        self.m = np.asarray(m, dtype=float)
        self.bmat = np.asarray(bmat, dtype=float)

    @classmethod
    def empty(cls, params: HawkesParams):
        d = params.dim
        return cls(0.0, np.zeros((d, d)), params.m, params.b_matrix())

    def advance(self, dt: float) -> "IntensityState":
        return IntensityState(self.last_time + dt, self.S * np.exp(-self.bmat * dt),
                              self.m, self.bmat)

    def jump(self, j: int, amounts) -> "IntensityState":
        S = self.S.copy()
        S[:, j] += amounts
        return IntensityState(self.last_time, S, self.m, self.bmat)

    def intensity_star(self, t=None) -> np.ndarray:
        dt = 0.0 if t is None else t - self.last_time
        return self.m + (self.S * np.exp(-self.bmat * dt)).sum(axis=1)


# --------------------------------------------------------------------------
# mark links


def link_constants(link, gamma, psi):
    """Normalising constant c(gamma, psi) and its derivatives, elementwise."""
    gamma = np.asarray(gamma, dtype=float)
    one = np.ones_like(gamma)
    zero = np.zeros_like(gamma)
    if link in ("none", "exp", "power"):
        return one, zero, zero
    if psi is None or not psi > 0:
        raise InvalidNormalization("normalized links need psi > 0")
    if link == "normexp":
        if np.any(gamma >= psi):
            raise InvalidNormalization("normexp link needs gamma < psi")
        return (psi - gamma) / psi, -one / psi, gamma / psi ** 2
    if np.any(gamma <= -1):
        raise InvalidNormalization("normpower link needs gamma > -1")
    c = np.exp(gamma * math.log(psi) - gammaln(1.0 + gamma))
    return c, c * (math.log(psi) - digamma(1.0 + gamma)), c * gamma / psi


def mark_link_eval(link, gamma, kappa, psi=None):
    """phi_gamma(kappa) for one (i, j) pair."""
    c, _, _ = link_constants(link, np.asarray(gamma, dtype=float), psi)
    kappa = np.asarray(kappa, dtype=float)
    if link in ("power", "normpower") and np.any(kappa <= 0):
        raise NonPositiveMark("power links need strictly positive marks")
    if link in ("exp", "normexp"):
        out = c * np.exp(gamma * kappa)
    elif link in ("power", "normpower"):
        out = c * kappa ** gamma
    else:
        out = np.ones_like(kappa)
    return out[()] if np.ndim(out) == 0 else out


def link_arrays(spec: ModelSpec, params: HawkesParams, real: Realization, with_grad=False):
    """phi[k, i] for event k seen by receiver i, plus gamma/psi derivatives."""
    n, d = real.n_events, spec.dim
    if not spec.marked:
        phi = np.ones((n, d))
        return (phi, np.zeros((n, d)), np.zeros((n, d))) if with_grad else phi
    if real.marks is None:
        raise MissingMark("marked model but the data carry no marks")
    gam = params.gamma_matrix()
    c, dc_g, dc_p = link_constants(spec.link, gam, params.psi)
    # extreme trial parameters overflow to inf; callers treat that as infeasible
    with np.errstate(over="ignore", invalid="ignore"):
        cols = real.components
        kap = real.marks[:, None]
        g = gam[:, cols].T
        if spec.link in ("exp", "normexp"):
            base = np.exp(g * kap)
            dbase = kap * base
        else:
            if np.any(real.marks <= 0):
                raise NonPositiveMark("power links need strictly positive marks")
            logk = np.log(kap)
            base = np.exp(g * logk)
            dbase = logk * base
        cc = c[:, cols].T
        phi = cc * base
        if not with_grad:
            return phi
        return phi, dc_g[:, cols].T * base + cc * dbase, dc_p[:, cols].T * base


def _check(spec, params, real):
    params.validate_for(spec)
    if real.dim != spec.dim:
        raise DataError(f"data dimension {real.dim} does not match model {spec.dim}")
    if spec.marked and real.marks is None:
        raise MissingMark("marked model but the data carry no marks")


def _arrays(spec, params, real):
    _check(spec, params, real)
    phi = link_arrays(spec, params, real)
    return real.times, real.components, np.ascontiguousarray(phi)


# --------------------------------------------------------------------------
# intensity


def intensity_path(params: HawkesParams, spec: ModelSpec, real: Realization, ts):
    """lambda* and lambda = max(lambda*, 0) at the times ``ts`` (left limits)."""
    t, c, phi = _arrays(spec, params, real)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    order = np.argsort(ts, kind="stable")
    star = np.empty((ts.size, spec.dim))
    star[order] = K.intensity_star_at(t, c, phi, params.m, np.array(params.a),
                                      params.b_matrix(), ts[order])
    return star, np.maximum(star, 0.0)


def intensity_at(params, spec, real, t: float):
    star, lam = intensity_path(params, spec, real, [t])
    return star[0], lam[0]


def event_left_right_limits(params, spec, real):
    """lambda*(T_k) and lambda*(T_k+) for every event, shape (N, d) each."""
    t, c, phi = _arrays(spec, params, real)
    return K.left_right_limits(t, c, phi, params.m, np.array(params.a), params.b_matrix())


# --------------------------------------------------------------------------
# compensators


def restart_time(lam_plus, m, b, t_k, t_next=math.inf) -> float:
    """First time after t_k at which a truncated intensity is positive again."""
    return float(K.restart_time(float(lam_plus), float(m), float(b), float(t_k), float(t_next)))


def compensator_linear(params, spec, real, T=None):
    if spec.nonlinear:
        raise NonLinearSpec("compensator_linear called with a nonlinear model")
    T = real.horizon if T is None else float(T)
    t, c, phi = _arrays(spec, params, real)
    _, per = K.compensator_at_events(t, c, phi, params.m, np.array(params.a),
                                     params.b_matrix(), T, False)
    return per, float(per.sum())


def compensator_nonlinear(params, spec, real, T=None):
    if not spec.nonlinear:
        raise InvalidSpec("compensator_nonlinear needs a nonlinear model")
    if spec.b_structure != "receiver":
        raise PerReceiverRequired("nonlinear compensator needs per-receiver decays")
    T = real.horizon if T is None else float(T)
    t, c, phi = _arrays(spec, params, real)
    per = K.nonlinear_compensator(t, c, phi, params.m, np.array(params.a),
                                  params.b_vector(), T)
    return per, float(per.sum())


def compensator(params, spec, real, T=None):
    if spec.nonlinear:
        return compensator_nonlinear(params, spec, real, T)
    return compensator_linear(params, spec, real, T)


def compensator_at_events(params, spec, real, T=None):
    """Lambda_i(T_k) for all events (N, d) and Lambda_i(T) (d,)."""
    T = real.horizon if T is None else float(T)
    t, c, phi = _arrays(spec, params, real)
    return K.compensator_at_events(t, c, phi, params.m, np.array(params.a),
                                   params.b_matrix(), T, spec.nonlinear)


def compensator_path(params, spec, real, ts):
    """Lambda_i(t) at arbitrary times ``ts``, shape (len(ts), d).

    The intensity is driven by the events of ``real``; this is the
    compensator of the frozen intensity used for conditional simulation.
    """
    if spec.nonlinear and spec.b_structure != "receiver":
        raise PerReceiverRequired("nonlinear compensator needs per-receiver decays")
    t, c, phi = _arrays(spec, params, real)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    order = np.argsort(ts, kind="stable")
    out = np.empty((ts.size, spec.dim))
    out[order] = K.compensator_at_query(t, c, phi, params.m, np.array(params.a),
                                        params.b_matrix(), ts[order], spec.nonlinear)
    return out


@dataclass
class TimeChange:
    per_component: list
    merged_times: np.ndarray
    merged_marks_uniform: Optional[np.ndarray]
    totals: np.ndarray = field(default_factory=lambda: np.zeros(0))


def time_change(params, spec, real) -> TimeChange:
    """Transformed event times.

    ``per_component[i]`` holds Lambda_i at the events of component i;
    ``merged_times`` holds the total compensator at every event and, for
    marked data with a mark rate, ``merged_marks_uniform`` the mark CDF values.
    """
    at, tot = compensator_at_events(params, spec, real)
    per = [at[real.components == i, i] for i in range(spec.dim)]
    merged = at.sum(axis=1)
    u = None
    if real.marks is not None and params.psi is not None:
        u = -np.expm1(-params.psi * real.marks)
    return TimeChange(per, merged, u, tot)


# --------------------------------------------------------------------------
# checks


def spectral_radius(Q, tol=1e-10, max_iter=10_000) -> float:
    """Perron root of a nonnegative matrix by power iteration on Q + I."""
    Q = np.abs(np.asarray(Q, dtype=float))
    if not np.any(Q):
        return 0.0
    M = Q + np.eye(Q.shape[0])
    x = np.ones(Q.shape[0]) / math.sqrt(Q.shape[0])
    rho = 1.0
    for _ in range(max_iter):
        y = M @ x
        rho = float(np.linalg.norm(y))
        y /= rho
        done = np.max(np.abs(y - x)) <= tol
        x = y
        if done:
            break
    return rho - 1.0


def stationarity_check(params: HawkesParams, spec: ModelSpec, mc_draws=200_000, seed=0):
    """Spectral radius of (|a_ij| / b_ij) and whether E[phi(kappa)] = 1 holds."""
    radius = spectral_radius(np.abs(params.a) / params.b_matrix())
    if not spec.marked or spec.normalized:
        normalized = True
    elif params.psi is None or params.gamma is None:
        normalized = not np.any(params.gamma_matrix())
    else:
        rng = np.random.default_rng(seed)
        kap = rng.exponential(1.0 / params.psi, size=mc_draws)
        normalized = True
        for g in np.unique(params.gamma_matrix()):
            vals = mark_link_eval(spec.link, g, kap)
            se = vals.std() / math.sqrt(mc_draws)
            if not np.isfinite(se) or abs(vals.mean() - 1.0) > 3 * se + 1e-12:
                normalized = False
    return {"spectral_radius": radius, "stationary": radius < 1.0, "normalized": normalized}


def identifiability_check(real: Realization, spec: ModelSpec):
    """Per (i, j): component j has two events with distinct positive marks.

    For unmarked models only one event per component is needed.
    """
    d = spec.dim
    per = np.zeros((d, d), dtype=bool)
    for j in range(d):
        if spec.marked:
            if real.marks is None:
                ok = False
            else:
                mk = real.marks[real.components == j]
                ok = np.unique(mk[mk > 0]).size >= 2
        else:
            ok = bool(np.any(real.components == j))
        per[:, j] = ok
    return {"ok": bool(per.all()), "per_pair": per}
