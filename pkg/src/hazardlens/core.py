"""Shared data model: survival records, step functions, seeding and CSV I/O."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "DomainError",
    "SchemaError",
    "EstimationError",
    "SurvivalSample",
    "SurvivalData",
    "StepFunction",
    "PiecewiseLinearCumHaz",
    "inverse_cumulative",
    "SeedSpec",
    "PotentialOutcomePair",
    "PotentialOutcomes",
    "read_dataset",
    "write_dataset",
    "write_table",
]


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


class SchemaError(ValueError):
    """A dataset does not conform to the CSV schema."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


class EstimationError(RuntimeError):
    """An estimator could not produce a result for the given data."""


# ---------------------------------------------------------------------------
# Survival records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurvivalSample:
    """One subject's follow-up record."""

    id: object
    time: float
    status: int
    arm: int
    covariates: tuple = ()

    def __post_init__(self):
        if not self.time >= 0:
            raise DomainError(f"time must be >= 0, got {self.time}")
        if self.status not in (0, 1):
            raise DomainError(f"status must be 0 or 1, got {self.status}")
        if self.arm not in (0, 1):
            raise DomainError(f"arm must be 0 or 1, got {self.arm}")


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v


@dataclass(frozen=True, eq=False)
class SurvivalData:
    """Column-oriented dataset of :class:`SurvivalSample` records.

    Arrays are made read-only on construction so instances can be shared.
    """

    time: np.ndarray
    status: np.ndarray
    arm: np.ndarray
    covariates: np.ndarray = None
    ids: np.ndarray = None
    covariate_names: tuple = ()

    def __post_init__(self):
        time = np.array(self.time, dtype=float).ravel()
        n = time.shape[0]
        status = np.asarray(self.status).astype(np.int8).ravel()
        arm = np.asarray(self.arm).astype(np.int8).ravel()
        cov = self.covariates
        cov = np.zeros((n, 0)) if cov is None else np.array(cov, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        ids = np.arange(n) if self.ids is None else np.array(self.ids)
        names = tuple(self.covariate_names) or tuple(
            f"cov_{j + 1}" for j in range(cov.shape[1])
        )
        if not (status.shape[0] == arm.shape[0] == cov.shape[0] == ids.shape[0] == n):
            raise DomainError("time, status, arm, covariates and ids must have equal length")
        if len(names) != cov.shape[1]:
            raise DomainError("one covariate name per covariate column is required")
        if n and not np.all(time >= 0):
            raise DomainError("times must be nonnegative")
        if not np.all(np.isin(status, (0, 1))):
            raise DomainError("status must be 0 or 1")
        if not np.all(np.isin(arm, (0, 1))):
            raise DomainError("arm must be 0 or 1")
        for arr in (time, status, arm, cov, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "arm", arm)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "covariate_names", names)

    def __len__(self):
        return self.time.shape[0]

    def __iter__(self) -> Iterator[SurvivalSample]:
        for i in range(len(self)):
            yield SurvivalSample(
                _plain(self.ids[i]),
                float(self.time[i]),
                int(self.status[i]),
                int(self.arm[i]),
                tuple(float(v) for v in self.covariates[i]),
            )

    @classmethod
    def from_samples(cls, samples: Sequence[SurvivalSample], covariate_names=()):
        samples = list(samples)
        widths = {len(s.covariates) for s in samples}
        if len(widths) > 1:
            raise DomainError("covariate vector length differs between samples")
        k = widths.pop() if widths else 0
        return cls(
            time=[s.time for s in samples],
            status=[s.status for s in samples],
            arm=[s.arm for s in samples],
            covariates=np.array([s.covariates for s in samples], dtype=float).reshape(len(samples), k),
            ids=np.array([s.id for s in samples], dtype=object),
            covariate_names=covariate_names,
        )

    def subset(self, mask_or_index) -> "SurvivalData":
        return SurvivalData(
            self.time[mask_or_index],
            self.status[mask_or_index],
            self.arm[mask_or_index],
            self.covariates[mask_or_index],
            self.ids[mask_or_index],
            self.covariate_names,
        )

    def design(self, covariates=("arm",)) -> np.ndarray:
        """Design matrix for the named columns (``"arm"`` or covariate names/indices)."""
        cols = []
        for c in covariates:
            if c == "arm":
                cols.append(self.arm.astype(float))
            elif isinstance(c, (int, np.integer)):
                cols.append(self.covariates[:, c])
            elif c in self.covariate_names:
                cols.append(self.covariates[:, self.covariate_names.index(c)])
            else:
                raise KeyError(f"unknown covariate {c!r}")
        return np.column_stack(cols) if cols else np.zeros((len(self), 0))


def as_data(data) -> SurvivalData:
    if isinstance(data, SurvivalData):
        return data
    return SurvivalData.from_samples(data)


# ---------------------------------------------------------------------------
# Step functions and cumulative hazards
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous piecewise-constant function on ``[0, inf)``.

    ``values[0]`` holds on ``[0, jump_times[0])`` and ``values[k]`` on
    ``[jump_times[k-1], jump_times[k])``.
    """

    jump_times: np.ndarray
    values: np.ndarray
    domain_end: float | None = None

    def __post_init__(self):
        jt = np.array(self.jump_times, dtype=float).ravel()
        vals = np.array(self.values, dtype=float).ravel()
        if vals.shape[0] != jt.shape[0] + 1:
            raise DomainError("need exactly one more value than jump times")
        if jt.size and (jt[0] < 0 or np.any(np.diff(jt) <= 0)):
            raise DomainError("jump times must be nonnegative and strictly increasing")
        jt.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value, domain_end=None):
        return cls(np.empty(0), [value], domain_end)

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(np.isnan(t)):
            raise DomainError("step functions are defined on t >= 0")
        if self.domain_end is not None and np.any(t > self.domain_end):
            raise DomainError(f"t beyond domain end {self.domain_end}")
        return t

    def __call__(self, t):
        t = self._check(t)
        out = self.values[np.searchsorted(self.jump_times, t, side="right")]
        return out if out.ndim else float(out)

    def integrate(self, t):
        """Exact integral over ``[0, t]`` (sum of rectangle areas)."""
        t = self._check(t)
        knots = np.concatenate(([0.0], self.jump_times))
        areas = np.concatenate(([0.0], np.cumsum(np.diff(knots) * self.values[:-1])))
        k = np.searchsorted(self.jump_times, t, side="right")
        out = areas[k] + (t - knots[k]) * self.values[k]
        return out if out.ndim else float(out)

    def to_rows(self):
        """(t, value) rows starting at t=0, one per distinct piece."""
        ts = np.concatenate(([0.0], self.jump_times))
        return list(zip(ts.tolist(), self.values.tolist()))


def step_eval(f: StepFunction, t):
    return f(t)


def step_integrate(f: StepFunction, t):
    return f.integrate(t)


@dataclass(frozen=True, eq=False)
class PiecewiseLinearCumHaz:
    """Cumulative hazard of a piecewise-constant hazard given as a StepFunction."""

    hazard: StepFunction

    def __post_init__(self):
        if np.any(self.hazard.values < 0):
            raise DomainError("hazard must be nonnegative")

    @classmethod
    def constant(cls, rate):
        return cls(StepFunction.constant(rate))

    def __call__(self, t):
        return self.hazard.integrate(t)

    def inverse(self, u):
        u = np.asarray(u, dtype=float)
        h = self.hazard
        knots = np.concatenate(([0.0], h.jump_times))
        cum = np.concatenate(([0.0], np.cumsum(np.diff(knots) * h.values[:-1])))
        # first piece whose end-of-segment cumulative reaches u
        k = np.searchsorted(cum, u, side="left") - 1
        k = np.clip(k, 0, knots.size - 1)
        rate = h.values[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = knots[k] + (u - cum[k]) / rate
        t = np.where(u <= 0, 0.0, t)
        t = np.where((k == knots.size - 1) & (rate <= 0), np.inf, t)
        return t if t.ndim else float(t)

    @property
    def sup(self):
        h = self.hazard
        if h.values[-1] > 0:
            return math.inf
        return float(self(h.jump_times[-1])) if h.jump_times.size else 0.0


def inverse_cumulative(cumhaz, u):
    """Generalised inverse ``inf{t : cumhaz(t) >= u}`` of a cumulative hazard.

    ``cumhaz`` may be a :class:`PiecewiseLinearCumHaz` (exact inversion), a
    :class:`StepFunction` in the cumulative-hazard role (returns a jump
    time), or any nondecreasing callable with ``cumhaz(0) == 0`` (bracketed
    root finding). Returns ``inf`` where ``u`` exceeds the supremum.
    """
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr <= 0):
        raise DomainError("u must be positive")
    if isinstance(cumhaz, PiecewiseLinearCumHaz):
        return cumhaz.inverse(u)
    if isinstance(cumhaz, StepFunction):
        # values[k] holds from jump k-1 onward; first k with values[k] >= u
        cm = np.maximum.accumulate(cumhaz.values)
        k = np.searchsorted(cm, u_arr, side="left")
        knots = np.concatenate(([0.0], cumhaz.jump_times, [np.inf]))
        out = knots[k]
        return out if out.ndim else float(out)
    if hasattr(cumhaz, "inverse"):
        return cumhaz.inverse(u)
    return _invert_callable(cumhaz, u_arr)


def _invert_callable(fn: Callable, u: np.ndarray, t_cap=1e12):
    flat = u.ravel()
    out = np.empty_like(flat)
    for i, target in enumerate(flat):
        hi = 1.0
        while fn(hi) < target and hi < t_cap:
            hi *= 2.0
        if fn(hi) < target:
            out[i] = np.inf
            continue
        out[i] = brentq(lambda s: fn(s) - target, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    out = out.reshape(u.shape)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one reproducible random stream.

    The stream depends only on ``(master_seed, stream_id, *substream)``, not
    on the order in which streams are created, so replicates can be
    distributed over workers freely.
    """

    master_seed: int
    stream_id: int = 0

    def rng(self, *substream: int) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.master_seed) & (2**64 - 1),
            spawn_key=(int(self.stream_id), *map(int, substream)),
        )
        return np.random.Generator(np.random.Philox(ss))

    def child(self, stream_id: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, stream_id)


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, SeedSpec):
        return seed.rng()
    return SeedSpec(0 if seed is None else int(seed)).rng()


# ---------------------------------------------------------------------------
# Potential outcomes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialOutcomePair:
    t0: float
    t1: float
    z: object
    a: int
    t_obs: float

    def __post_init__(self):
        expected = self.t1 if self.a == 1 else self.t0
        if self.t_obs != expected:
            raise DomainError("t_obs must equal t1 when a=1 and t0 when a=0")


@dataclass(frozen=True, eq=False)
class PotentialOutcomes:
    """Struct-of-arrays collection of potential-outcome pairs.

    ``z`` is ``(n,)`` for a scalar frailty or ``(n, k)`` for multilevel ones.
    """

    t0: np.ndarray
    t1: np.ndarray
    z: np.ndarray
    a: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("t0", "t1", "z", "a"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def t_obs(self):
        return np.where(self.a == 1, self.t1, self.t0)

    def __len__(self):
        return self.t0.shape[0]

    def __iter__(self) -> Iterator[PotentialOutcomePair]:
        tobs = self.t_obs
        for i in range(len(self)):
            z = self.z[i]
            yield PotentialOutcomePair(
                float(self.t0[i]), float(self.t1[i]),
                float(z) if np.ndim(z) == 0 else tuple(z.tolist()),
                int(self.a[i]), float(tobs[i]),
            )

    def z_columns(self):
        z = self.z if self.z.ndim == 2 else self.z[:, None]
        names = ["z"] if z.shape[1] == 1 else [f"z{j + 1}" for j in range(z.shape[1])]
        return names, z

    def to_csv(self, path):
        names, z = self.z_columns()
        header = ["id", "t0", "t1", *names, "a", "t_obs"]
        cols = [np.arange(len(self)), self.t0, self.t1, *z.T, self.a, self.t_obs]
        write_table(path, header, cols)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

_REQUIRED = ("id", "time", "status", "arm")
# simulator extension columns, skipped when reading
_EXTENSION = re.compile(r"z\d*|t0|t1")


def read_dataset(path) -> SurvivalData:
    """Read ``id,time,status,arm[,cov...]`` CSV; extension columns ``z, z1.., t0, t1`` are ignored."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("empty file, header required") from None
        if tuple(header[:4]) != _REQUIRED:
            raise SchemaError(f"header must start with {','.join(_REQUIRED)}", row=1)
        cov_idx = [j for j, h in enumerate(header[4:], start=4) if not _EXTENSION.fullmatch(h)]
        ids, time, status, arm, cov = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"expected {len(header)} fields, found {len(row)}", row=lineno)
            ids.append(row[0].strip())
            t = _parse_float(row[1], lineno, "time")
            if t < 0:
                raise SchemaError("time must be nonnegative", lineno, "time")
            time.append(t)
            status.append(_parse_flag(row[2], lineno, "status"))
            arm.append(_parse_flag(row[3], lineno, "arm"))
            cov.append([_parse_float(row[j], lineno, header[j]) for j in cov_idx])
    if not time:
        raise SchemaError("dataset has no rows")
    return SurvivalData(
        time, status, arm,
        np.array(cov, dtype=float).reshape(len(time), len(cov_idx)),
        np.array(ids, dtype=object),
        tuple(header[j] for j in cov_idx),
    )


def _parse_float(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"not a number: {text!r}", row, column) from None
    if not math.isfinite(value):
        raise SchemaError(f"not a finite number: {text!r}", row, column)
    return value


def _parse_flag(text, row, column):
    value = _parse_float(text, row, column)
    if value not in (0.0, 1.0):
        raise SchemaError(f"must be 0 or 1, got {text!r}", row, column)
    return int(value)


def write_dataset(path, data: SurvivalData, extra: dict | None = None):
    """Write the dataset schema, optionally followed by extension columns."""
    header = ["id", "time", "status", "arm", *data.covariate_names]
    cols = [data.ids, data.time, data.status, data.arm, *data.covariates.T]
    for name, values in (extra or {}).items():
        header.append(name)
        cols.append(np.asarray(values))
    write_table(path, header, cols)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return str(int(v))
    return str(v)


def write_table(path, header, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])
