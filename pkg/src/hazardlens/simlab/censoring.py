"""Censoring schemes applied to simulated event times."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DomainError, PotentialOutcomes, SurvivalData, make_rng

__all__ = ["NoCensoring", "MixedCensoring", "UniformCensoring", "AdminCensoring", "censor_times", "apply_censoring"]


@dataclass(frozen=True)
class NoCensoring:
    def draw(self, rng, n):
        return np.full(n, np.inf)


@dataclass(frozen=True)
class MixedCensoring:
    """Uniform(0, u_max) censoring for a random fraction, ``admin_time`` for the rest."""

    u_max: float = 10.0
    admin_time: float = 8.0
    random_fraction: float = 0.5

    def __post_init__(self):
        if not (self.u_max > 0 and self.admin_time > 0 and 0 <= self.random_fraction <= 1):
            raise DomainError("censoring parameters must be positive and the fraction in [0, 1]")

    def draw(self, rng, n):
        uniform = rng.random(n) < self.random_fraction
        u = rng.uniform(0.0, self.u_max, n)
        return np.where(uniform, u, self.admin_time)


@dataclass(frozen=True)
class UniformCensoring:
    u_max: float

    def __post_init__(self):
        if not self.u_max > 0:
            raise DomainError("u_max must be positive")

    def draw(self, rng, n):
        return rng.uniform(0.0, self.u_max, n)


@dataclass(frozen=True)
class AdminCensoring:
    time: float

    def __post_init__(self):
        if not self.time >= 0:
            raise DomainError("administrative time must be nonnegative")

    def draw(self, rng, n):
        return np.full(n, float(self.time))


def censor_times(event_times, scheme, seed=None):
    """Observed times and event indicators; an event at the censoring time counts."""
    event_times = np.asarray(event_times, dtype=float)
    c = scheme.draw(make_rng(seed), event_times.shape[0])
    status = (event_times <= c).astype(np.int8)
    time = np.minimum(event_times, c)
    if not np.all(np.isfinite(time)):
        raise DomainError("infinite event time left uncensored; use a censoring scheme")
    return time, status


def apply_censoring(outcomes: PotentialOutcomes, scheme, seed=None) -> SurvivalData:
    """Censor the observed outcome of each unit with its own random stream."""
    time, status = censor_times(outcomes.t_obs, scheme, seed)
    return SurvivalData(time, status, np.asarray(outcomes.a))
