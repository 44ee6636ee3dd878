"""Censored stock forecast, scheduled interventions and expected shortages.

The projection of a station follows the forecast balance slope while the stock
is strictly inside ``(0, u)``, sticks to a bound while the slope pushes
outward, and leaves it as soon as the slope turns. Interventions add a jump of
their feasible part. Everything is computed analytically per linear segment.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "AppliedIntervention",
    "Intervention",
    "Shortage",
    "ShortageKind",
    "StockOutOfRange",
    "StockProjection",
    "UnsortedInterventions",
    "detect_shortages",
    "first_shortage",
    "project_stock",
    "shortage_delay",
    "total_lost",
]


class StockOutOfRange(ValueError):
    pass


class UnsortedInterventions(ValueError):
    pass


class ShortageKind(Enum):
    BIKE = "BikeShortage"
    STAND = "StandShortage"


@dataclass(frozen=True)
class Intervention:
    """Signed exchange at a station; ``amount > 0`` unloads bikes to the station."""

    station: int
    time: float
    amount: int
    vehicle: int | None = None

    def __post_init__(self):
        if self.amount == 0:
            raise ValueError("an intervention moves at least one bike")


@dataclass(frozen=True)
class AppliedIntervention:
    intervention: Intervention
    applied: float

    @property
    def shortfall(self):
        return self.intervention.amount - self.applied


@dataclass(frozen=True, eq=False)
class StockProjection:
    """Piecewise-linear forecast of the stock of one station after ``anchor``.

    ``times`` is non-decreasing; a repeated time is a jump caused by an
    intervention (first entry before, second after).
    """

    station: int
    anchor: float
    capacity: int
    times: np.ndarray
    values: np.ndarray
    applied: tuple[AppliedIntervention, ...] = ()

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def breakpoints(self):
        return np.unique(self.times)

    def value(self, t):
        """Right-continuous value at ``t`` (after any jump at ``t``)."""
        if t < self.anchor or t > self.horizon:
            raise ValueError(f"t={t} outside [{self.anchor}, {self.horizon}]")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self._interp(k, t)

    def left_value(self, t):
        """Value just before ``t`` (before any jump at ``t``)."""
        if t <= self.anchor or t > self.horizon:
            raise ValueError(f"t={t} outside ({self.anchor}, {self.horizon}]")
        k = int(np.searchsorted(self.times, t, side="left")) - 1
        if self.times[k + 1] == t:
            return float(self.values[k + 1])
        return self._interp(k, t)

    def _interp(self, k, t):
        if k >= len(self.times) - 1:
            return float(self.values[-1])
        t0, t1 = self.times[k], self.times[k + 1]
        v0, v1 = self.values[k], self.values[k + 1]
        return float(v0 + (v1 - v0) * (t - t0) / (t1 - t0))

    def to_csv(self):
        buf = io.StringIO()
        buf.write("t_s,value\n")
        for t, v in zip(self.times, self.values):
            buf.write(f"{float(t)!r},{float(v)!r}\n")
        return buf.getvalue()


def project_stock(station, anchor, stock, forecast, interventions=()):
    """Censored forecast of ``station``'s stock from ``anchor`` to the horizon.

    Parameters
    ----------
    station : Station
        Gives the id and capacity ``u``.
    anchor : float
        Current time; the projection starts at value ``stock`` here.
    stock : float
        Current stock, ``0 <= stock <= u``.
    forecast : ForecastCurve
        Balance forecast of the station; only its slopes matter.
    interventions : sequence of Intervention
        Sorted by time, all at ``time >= anchor`` and at this station.
    """
    u = station.capacity
    if not 0 <= stock <= u:
        raise StockOutOfRange(f"stock {stock} outside [0, {u}] at station {station.id}")
    interventions = list(interventions)
    times = [iv.time for iv in interventions]
    if any(b < a for a, b in zip(times, times[1:])):
        raise UnsortedInterventions("interventions must be sorted by time")
    for iv in interventions:
        if iv.station != station.id:
            raise ValueError(f"intervention at station {iv.station} projected on {station.id}")
        if iv.time < anchor:
            raise ValueError(f"intervention at {iv.time} precedes anchor {anchor}")

    bp = forecast.times
    slopes = forecast.slopes
    horizon = float(bp[-1])
    pts_t, pts_v, applied = [float(anchor)], [float(stock)], []
    v = float(stock)
    j = 0

    def jump(t):
        nonlocal v, j
        while j < len(interventions) and interventions[j].time <= t:
            iv = interventions[j]
            new = min(float(u), max(0.0, v + iv.amount))
            applied.append(AppliedIntervention(iv, new - v))
            v = new
            pts_t.append(float(t))
            pts_v.append(v)
            j += 1

    jump(anchor)
    cuts = sorted({float(b) for b in bp if anchor < b < horizon} | {iv.time for iv in interventions if anchor < iv.time})
    t = float(anchor)
    for c in cuts + [horizon]:
        if c > horizon:
            break
        if c > t:
            k = min(int(np.searchsorted(bp, t, side="right")) - 1, len(slopes) - 1)
            g = slopes[k]
            if g > 0 and v < u:
                h = t + (u - v) / g
                if h < c:
                    pts_t.append(h)
                    pts_v.append(float(u))
                    v = float(u)
                else:
                    v = min(float(u), v + g * (c - t))
            elif g < 0 and v > 0:
                h = t + (0.0 - v) / g
                if h < c:
                    pts_t.append(h)
                    pts_v.append(0.0)
                    v = 0.0
                else:
                    v = max(0.0, v + g * (c - t))
            pts_t.append(c)
            pts_v.append(v)
            t = c
        jump(c)

    return StockProjection(
        station=station.id,
        anchor=float(anchor),
        capacity=u,
        times=np.array(pts_t),
        values=np.array(pts_v),
        applied=tuple(applied),
    )


@dataclass(frozen=True)
class Shortage:
    station: int
    kind: ShortageKind
    start: float
    end: float
    expected_lost: float


def detect_shortages(projection, rental_rate, return_rate):
    """Maximal intervals at an empty (full) station while rentals (returns) are wanted.

    ``expected_lost`` integrates the blocked side's rate over the interval.
    Intervals with zero rate are not shortages.
    """
    u = projection.capacity
    times, values = projection.times, projection.values
    rate_bp = np.union1d(rental_rate.breakpoints, return_rate.breakpoints).astype(float)
    out = []
    current = None  # [kind, start, end, lost]

    def close():
        nonlocal current
        if current is not None:
            out.append(Shortage(projection.station, current[0], current[1], current[2], current[3]))
            current = None

    for i in range(len(times) - 1):
        a, b = times[i], times[i + 1]
        if b <= a:
            continue
        va, vb = values[i], values[i + 1]
        if va == 0 and vb == 0:
            kind, rate = ShortageKind.BIKE, rental_rate
        elif va == u and vb == u:
            kind, rate = ShortageKind.STAND, return_rate
        else:
            close()
            continue
        inner = rate_bp[(rate_bp > a) & (rate_bp < b)]
        edges = [a, *inner.tolist(), b]
        for x, y in zip(edges, edges[1:]):
            r = float(rate.value(x))
            if r <= 0:
                close()
                continue
            lost = r * (y - x) / 3600.0
            if current is not None and current[0] is kind and current[2] == x:
                current[2] = y
                current[3] += lost
            else:
                close()
                current = [kind, x, y, lost]
    close()
    return out


def first_shortage(shortages):
    return min(shortages, key=lambda s: s.start) if shortages else None


def total_lost(shortages):
    return float(sum(s.expected_lost for s in shortages))


def shortage_delay(before, after, horizon):
    """How much later the first shortage starts in ``after`` than in ``before``.

    Both are shortage lists of the same station and anchor; no shortage counts
    as a first shortage at the horizon. Negative when ``after`` is worse.
    """
    start = lambda ss: first_shortage(ss).start if ss else float(horizon)
    return start(after) - start(before)
