"""Per-station demand rates, forecast curves and Poisson scenario sampling.

Rates are piecewise constant and given in events per hour; time is integer
seconds. A scenario is one sampled day of rental and return requests.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "RENT",
    "RETURN",
    "RNG_ALGORITHM",
    "DemandModel",
    "ForecastCurve",
    "RateFunction",
    "Scenario",
    "StationDemand",
    "TimeOutOfHorizon",
    "UnknownStation",
    "balance_forecast",
    "cumulative_forecast",
    "demand_from_dict",
    "demand_to_dict",
    "forecast_curves",
    "load_demand",
    "sample_scenario",
    "substream",
]

RENT = 0
RETURN = 1
KIND_NAMES = {RENT: "RENT", RETURN: "RETURN"}

RNG_ALGORITHM = "numpy PCG64, SeedSequence(entropy=seed, spawn_key=(station_id, kind))"


class TimeOutOfHorizon(ValueError):
    pass


class UnknownStation(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class RateFunction:
    """Right-continuous piecewise-constant rate on ``[0, H]``.

    Parameters
    ----------
    breakpoints : array of int
        ``0 = t_0 < t_1 < ... < t_m = H`` in seconds.
    rates : array of float
        Rate of piece ``[t_k, t_{k+1})`` in events per hour.
    """

    breakpoints: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.int64)
        r = np.asarray(self.rates, dtype=float)
        if bp.ndim != 1 or len(bp) != len(r) + 1 or len(r) == 0:
            raise ValueError("need len(breakpoints) == len(rates) + 1 >= 2")
        if bp[0] != 0 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must start at 0 and strictly increase")
        if np.any(~np.isfinite(r)) or np.any(r < 0):
            raise ValueError("rates must be finite and non-negative")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "rates", r)
        cum = np.concatenate([[0.0], np.cumsum(r * np.diff(bp) / 3600.0)])
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def constant(cls, rate, horizon):
        return cls(np.array([0, horizon]), np.array([rate]))

    @classmethod
    def from_pieces(cls, rates, width, horizon=None):
        """Equal-width pieces; the last one is truncated at ``horizon``."""
        m = len(rates)
        horizon = m * width if horizon is None else horizon
        bp = np.minimum(np.arange(m + 1) * width, horizon)
        bp[-1] = horizon
        keep = np.concatenate([[True], np.diff(bp) > 0])
        bp = bp[keep]
        return cls(bp, np.asarray(rates, dtype=float)[: len(bp) - 1])

    @property
    def horizon(self):
        return int(self.breakpoints[-1])

    @property
    def per_second(self):
        return self.rates / 3600.0

    def value(self, t):
        """Rate (per hour) in effect at time ``t``."""
        k = np.searchsorted(self.breakpoints, t, side="right") - 1
        return self.rates[np.clip(k, 0, len(self.rates) - 1)]

    def cumulative(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, len(self.rates) - 1)
        return self._cum[k] + self.rates[k] * (t - self.breakpoints[k]) / 3600.0

    def integral(self, a, b):
        return float(self.cumulative(b) - self.cumulative(a))


def cumulative_forecast(rate, t):
    """Expected number of events in ``[0, t]``, exact for piecewise-constant rates."""
    if not 0 <= t <= rate.horizon:
        raise TimeOutOfHorizon(f"t={t} outside [0, {rate.horizon}]")
    return float(rate.cumulative(t))


@dataclass(frozen=True, eq=False)
class StationDemand:
    returns: RateFunction
    rentals: RateFunction


@dataclass(frozen=True, eq=False)
class DemandModel:
    stations: dict[int, StationDemand]
    tags: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return next(iter(self.stations.values())).rentals.horizon

    def __getitem__(self, sid):
        try:
            return self.stations[sid]
        except KeyError:
            raise UnknownStation(sid) from None


@dataclass(frozen=True, eq=False)
class ForecastCurve:
    """Cumulative expected returns/rentals and their balance at the breakpoints.

    All three are piecewise linear between ``times``. The balance may be negative
    or exceed capacity: it ignores stock.
    """

    station: int
    times: np.ndarray
    returns: np.ndarray
    rentals: np.ndarray
    return_rate: np.ndarray  # per second, one per piece
    rental_rate: np.ndarray

    @property
    def balance(self):
        return self.returns - self.rentals

    @property
    def slopes(self):
        """Balance slope per second on each piece."""
        return self.return_rate - self.rental_rate

    def value(self, t):
        return float(np.interp(t, self.times, self.balance))


def _union_rates(a, b):
    bp = np.union1d(a.breakpoints, b.breakpoints)
    left = bp[:-1]
    return bp, a.value(left) / 3600.0, b.value(left) / 3600.0


def balance_forecast(model, station):
    """Forecast curve of one station; breakpoints are the union of both rate grids."""
    sd = model[station]
    bp, ret, rent = _union_rates(sd.returns, sd.rentals)
    return ForecastCurve(
        station=station,
        times=bp.astype(float),
        returns=sd.returns.cumulative(bp),
        rentals=sd.rentals.cumulative(bp),
        return_rate=ret,
        rental_rate=rent,
    )


def forecast_curves(model):
    return {sid: balance_forecast(model, sid) for sid in sorted(model.stations)}


# --- scenarios -------------------------------------------------------------------


def substream(seed, station, kind):
    """Independent generator for one (station, kind) pair of a master seed."""
    if seed < 0:
        raise ValueError("seed must be a non-negative 64-bit integer")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(station), int(kind)))
    return np.random.Generator(np.random.PCG64(ss))


def _sample_process(rate, rng):
    bp = rate.breakpoints
    widths = np.diff(bp)
    counts = rng.poisson(rate.rates * widths / 3600.0)
    out = []
    for k in np.flatnonzero(counts):
        u = rng.random(counts[k])
        out.append(bp[k] + np.floor(u * widths[k]).astype(np.int64))
    if not out:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(out))


@dataclass(frozen=True, eq=False)
class Scenario:
    """Sampled request times (seconds) per station; sorted ascending."""

    rentals: dict[int, np.ndarray]
    returns: dict[int, np.ndarray]
    horizon: int
    seed: int | None = None

    def events(self):
        """Merged ``(n, 3)`` int array of ``(time, station, kind)`` in processing order.

        Ties are broken by station id, then rentals before returns.
        """
        parts = []
        for kind, by_station in ((RENT, self.rentals), (RETURN, self.returns)):
            for sid, times in by_station.items():
                if len(times):
                    block = np.empty((len(times), 3), dtype=np.int64)
                    block[:, 0] = times
                    block[:, 1] = sid
                    block[:, 2] = kind
                    parts.append(block)
        if not parts:
            return np.zeros((0, 3), dtype=np.int64)
        ev = np.concatenate(parts)
        order = np.lexsort((ev[:, 2], ev[:, 1], ev[:, 0]))
        return ev[order]

    def count(self):
        return sum(len(t) for t in self.rentals.values()) + sum(len(t) for t in self.returns.values())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_s", "station_id", "kind"])
        for t, sid, kind in self.events():
            w.writerow([int(t), int(sid), KIND_NAMES[int(kind)]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, horizon, stations=(), seed=None):
        rentals = {sid: [] for sid in stations}
        returns = {sid: [] for sid in stations}
        for row in csv.DictReader(io.StringIO(text)):
            kind, sid = row["kind"], int(row["station_id"])
            if kind not in ("RENT", "RETURN"):
                raise ValueError(f"unknown event kind {kind!r}")
            rentals.setdefault(sid, [])
            returns.setdefault(sid, [])
            (rentals if kind == "RENT" else returns)[sid].append(int(row["time_s"]))
        conv = lambda d: {k: np.sort(np.asarray(v, dtype=np.int64)) for k, v in sorted(d.items())}
        return cls(conv(rentals), conv(returns), horizon, seed)


def sample_scenario(model, seed):
    """Sample one day of requests from the inhomogeneous Poisson processes.

    Each piece of width ``w`` and rate ``lam`` gets ``Poisson(lam * w)`` events
    placed uniformly inside it (floored to whole seconds). Every (station, kind)
    draws from its own sub-stream, so adding or reordering stations does not
    change the requests of the others.
    """
    rentals, returns = {}, {}
    for sid in sorted(model.stations):
        sd = model.stations[sid]
        rentals[sid] = _sample_process(sd.rentals, substream(seed, sid, RENT))
        returns[sid] = _sample_process(sd.returns, substream(seed, sid, RETURN))
    return Scenario(rentals, returns, model.horizon, seed)


# --- documents -------------------------------------------------------------------


def demand_from_dict(doc, horizon=None):
    width = int(doc["piece_width_s"])
    stations = {}
    for s in doc["stations"]:
        ret, rent = s["return_rates"], s["rental_rates"]
        h = horizon if horizon is not None else doc.get("horizon_s", width * len(rent))
        stations[int(s["id"])] = StationDemand(
            returns=RateFunction.from_pieces(ret, width, h),
            rentals=RateFunction.from_pieces(rent, width, h),
        )
    return DemandModel(stations=stations, tags=dict(doc.get("tags", {})))


def demand_to_dict(model, width):
    doc = {"tags": dict(model.tags), "piece_width_s": int(width), "horizon_s": model.horizon, "stations": []}
    for sid in sorted(model.stations):
        sd = model.stations[sid]
        for rf in (sd.returns, sd.rentals):
            if np.any(np.diff(rf.breakpoints)[:-1] != width):
                raise ValueError(f"station {sid} rates are not on a {width}s grid")
        doc["stations"].append(
            {"id": sid, "return_rates": sd.returns.rates.tolist(), "rental_rates": sd.rentals.rates.tolist()}
        )
    return doc


def load_demand(path, horizon=None):
    return demand_from_dict(json.loads(Path(path).read_text()), horizon)
