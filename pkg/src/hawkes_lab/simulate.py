"""Thinning simulation of Poisson and (non)linear marked Hawkes processes."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import partial
from typing import Optional

import numpy as np

from . import _kernels as K
from ._parallel import pmap
from .core import (
    HawkesParams,
    ModelSpec,
    Realization,
    _LINK_KIND,
    link_arrays,
    link_constants,
    stationarity_check,
)
from .errors import CapExceeded, ConfigError, InvalidParams

MASK64 = (1 << 64) - 1
DEFAULT_MAX_EVENTS = 10_000_000


class StationarityWarning(UserWarning):
    pass


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    return (int(seed) & MASK64) ^ splitmix64(int(index))


def make_rng(seed: int, index: Optional[int] = None) -> np.random.Generator:
    """Counter-based stream for a master seed and an optional task index."""
    key = int(seed) & MASK64 if index is None else derive_seed(seed, index)
    return np.random.Generator(np.random.Philox(key))


@dataclass(frozen=True)
class SimConfig:
    spec: ModelSpec
    params: HawkesParams
    horizon: float
    seed: int = 0
    max_events: Optional[int] = DEFAULT_MAX_EVENTS

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError("horizon must be > 0")
        if self.max_events is not None and self.max_events <= 0:
            raise ConfigError("max_events must be > 0")
        self.params.validate_for(self.spec)
        if self.spec.marked and self.params.psi is None:
            raise InvalidParams("simulating marks needs the mark rate psi")


def _simulate(config: SimConfig, rng) -> Realization:
    spec, p = config.spec, config.params
    d = spec.dim
    gamma = p.gamma_matrix()
    if spec.marked:
        cmat = link_constants(spec.link, gamma, p.psi)[0]
        psi = p.psi
    else:
        cmat = np.ones((d, d))
        psi = 1.0
    cap = config.max_events or DEFAULT_MAX_EVENTS
    times, comps, marks, status = K.simulate_thinning(
        rng, p.m, np.array(p.a), p.b_matrix(), _LINK_KIND[spec.link], gamma,
        np.ascontiguousarray(cmat), float(psi), spec.marked, float(config.horizon), int(cap))
    if status:
        raise CapExceeded(f"simulation stopped after {cap} events; the process is likely explosive")
    return Realization(times.copy(), comps.copy(), config.horizon, d,
                       marks.copy() if spec.marked else None)


def simulate_hawkes(config: SimConfig) -> Realization:
    radius = stationarity_check(config.params, config.spec, mc_draws=1)["spectral_radius"]
    if radius >= 1.0:
        warnings.warn(f"spectral radius {radius:.4g} >= 1: the process may explode",
                      StationarityWarning, stacklevel=2)
    return _simulate(config, make_rng(config.seed))


def simulate_poisson(rate, horizon, seed=0) -> Realization:
    rate = np.atleast_1d(np.asarray(rate, dtype=float))
    spec = ModelSpec.poisson(rate.size)
    return simulate_hawkes(SimConfig(spec, HawkesParams.poisson(rate), horizon, seed))


def simulate_inhomogeneous_poisson(history: Realization, params: HawkesParams, spec: ModelSpec,
                                   horizon=None, seed=0, rng=None) -> Realization:
    """Points of a Poisson process whose intensity is the (truncated) Hawkes
    intensity driven by the fixed ``history`` (a deterministic function of time)."""
    params.validate_for(spec)
    horizon = history.horizon if horizon is None else float(horizon)
    phi = np.ascontiguousarray(link_arrays(spec, params, history))
    rng = make_rng(seed) if rng is None else rng
    times, comps, _ = K.simulate_frozen(rng, history.times, history.components, phi, params.m,
                                        np.array(params.a), params.b_matrix(), horizon,
                                        False, 1.0)
    return Realization(times.copy(), comps.copy(), horizon, spec.dim)


def _one_rep(config: SimConfig, index: int) -> Realization:
    return _simulate(config, make_rng(config.seed, index))


def simulate_repetitions(config: SimConfig, n: int, jobs=None) -> list:
    """n independent paths; path r uses the stream derived from (seed, r)."""
    if n < 0:
        raise ConfigError("number of repetitions must be >= 0")
    if n == 0:
        return []
    radius = stationarity_check(config.params, config.spec, mc_draws=1)["spectral_radius"]
    if radius >= 1.0:
        warnings.warn(f"spectral radius {radius:.4g} >= 1: the process may explode",
                      StationarityWarning, stacklevel=2)
    return pmap(partial(_one_rep, config), range(n), jobs)
