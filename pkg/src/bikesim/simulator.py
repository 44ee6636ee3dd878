"""Discrete-event execution of one scenario against one setting.

User requests, vehicle movements and reoptimization epochs are processed from
a single priority queue ordered by ``(time, kind priority, sequence)``.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import json
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .demand import RENT
from .model import (
    DEPOT,
    SystemState,
    VehicleState,
    VehicleStatus,
    fleet_to_dict,
    layout_to_dict,
)
from .projection import Intervention

__all__ = [
    "EventKind",
    "InfeasibleInitialStock",
    "InternalOrderViolation",
    "MissedEvent",
    "ScenarioReport",
    "SimulationParams",
    "Simulation",
    "apply_user_event",
    "boundary_hours",
    "config_digest",
    "execute_visit",
    "run_scenario",
]

MISSED_RENTAL = "MissedRental"
MISSED_RETURN = "MissedReturn"


class InfeasibleInitialStock(ValueError):
    pass


class InternalOrderViolation(AssertionError):
    pass


class EventKind(IntEnum):
    """Kind priority used to order simultaneous events."""

    SHIFT_START = 0
    VEHICLE_ARRIVAL = 1
    USER_RENTAL = 2
    USER_RETURN = 3
    IDLE_CHECK = 4
    VEHICLE_DEPARTURE = 5
    SHIFT_END = 6


@dataclass(frozen=True)
class MissedEvent:
    time: int
    station: int
    kind: str


@dataclass(frozen=True)
class SimulationParams:
    service_time: int = 60  # seconds per bike loaded or unloaded
    depot_pool: int = 10**9
    bin_width: int = 1800
    # an on-shift vehicle with nothing planned re-plans at the next multiple of
    # this many seconds; 0 waits for the next arrival/departure epoch instead
    idle_recheck: int = 900


@dataclass
class VehicleStats:
    distance_m: float = 0.0
    interventions: int = 0
    bikes_moved: int = 0
    shortfall: int = 0


@dataclass
class ScenarioReport:
    """Service metrics of one simulated day."""

    seed: int | None
    digest: str
    horizon: int
    empty_seconds: np.ndarray  # per station, index 0 = station 1
    full_seconds: np.ndarray
    missed: list[MissedEvent]
    vehicles: dict[int, VehicleStats]
    n_epochs: int = 0
    interventions: list[Intervention] = field(default_factory=list)
    trace: list[tuple[int, int, int]] | None = None  # (time, station, stock) after each change

    @property
    def empty_hours(self):
        return self.empty_seconds / 3600.0

    @property
    def full_hours(self):
        return self.full_seconds / 3600.0

    @property
    def total_empty_hours(self):
        return float(self.empty_seconds.sum()) / 3600.0

    @property
    def total_full_hours(self):
        return float(self.full_seconds.sum()) / 3600.0

    @property
    def total_hours(self):
        return float(self.empty_seconds.sum() + self.full_seconds.sum()) / 3600.0

    @property
    def missed_rentals(self):
        return sum(1 for m in self.missed if m.kind == MISSED_RENTAL)

    @property
    def missed_returns(self):
        return sum(1 for m in self.missed if m.kind == MISSED_RETURN)

    def binned_misses(self, width=1800):
        """``(n_bins, 2)`` counts of missed rentals and returns per time bin."""
        n_bins = -(-self.horizon // width)
        out = np.zeros((n_bins, 2), dtype=np.int64)
        for m in self.missed:
            out[min(m.time // width, n_bins - 1), 0 if m.kind == MISSED_RENTAL else 1] += 1
        return out

    def to_dict(self):
        return {
            "seed": self.seed,
            "digest": self.digest,
            "horizon_s": self.horizon,
            "empty_hours": self.total_empty_hours,
            "full_hours": self.total_full_hours,
            "total_hours": self.total_hours,
            "missed_rentals": self.missed_rentals,
            "missed_returns": self.missed_returns,
            "epochs": self.n_epochs,
            "stations": [
                {"id": i + 1, "empty_hours": float(e) / 3600.0, "full_hours": float(f) / 3600.0}
                for i, (e, f) in enumerate(zip(self.empty_seconds, self.full_seconds))
            ],
            "vehicles": {
                str(k): {
                    "distance_m": round(v.distance_m, 3),
                    "interventions": v.interventions,
                    "bikes_moved": v.bikes_moved,
                    "shortfall": v.shortfall,
                }
                for k, v in sorted(self.vehicles.items())
            },
            "missed": [[m.time, m.station, m.kind] for m in self.missed],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def stations_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["station_id", "empty_hours", "full_hours", "total_hours"])
        for i, (e, f) in enumerate(zip(self.empty_seconds, self.full_seconds)):
            w.writerow([i + 1, repr(float(e) / 3600.0), repr(float(f) / 3600.0), repr(float(e + f) / 3600.0)])
        return buf.getvalue()

    def binned_csv(self, width=1800):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_start_s", "missed_rentals", "missed_returns", "total"])
        for b, (r, q) in enumerate(self.binned_misses(width)):
            w.writerow([b * width, int(r), int(q), int(r + q)])
        return buf.getvalue()


def config_digest(setting, stocks, params, extra=None):
    doc = {
        "layout": layout_to_dict(setting.layout, inline_matrix=True),
        "fleet": fleet_to_dict(setting.fleet),
        "stocks": [int(x) for x in stocks],
        "params": [params.service_time, params.depot_pool, params.bin_width, params.idle_recheck],
        "extra": extra,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def apply_user_event(stocks, capacities, station, kind):
    """Serve one request; return the missed kind or ``None``. Lost users do not retry."""
    if kind == RENT:
        if stocks[station] > 0:
            stocks[station] -= 1
            return None
        return MISSED_RENTAL
    if stocks[station] < capacities[station]:
        stocks[station] += 1
        return None
    return MISSED_RETURN


def execute_visit(stocks, capacities, vs, visit):
    """Apply the feasible part of a planned exchange and return it.

    The vehicle cannot take more than the station holds or it has room for,
    nor unload more than it carries or the station has free stands.
    """
    i = visit.station
    s, u = int(stocks[i]), int(capacities[i])
    lo = -min(s, vs.vehicle.capacity - vs.load)
    hi = min(u - s, vs.load)
    actual = max(lo, min(hi, visit.amount))
    stocks[i] += actual
    vs.load -= actual
    return actual


def boundary_hours(times, stocks, capacity, horizon):
    """Hours at 0 and at ``capacity`` of a stock path that takes value
    ``stocks[k]`` on ``[times[k], times[k+1])`` (``times[0] == 0``)."""
    t = np.append(np.asarray(times, dtype=np.int64), horizon)
    d = np.diff(t)
    s = np.asarray(stocks)
    return float(d[s == 0].sum()) / 3600.0, float(d[s == capacity].sum()) / 3600.0


class Simulation:
    def __init__(self, setting, stocks, scenario, policy=None, params=None, record_trace=False, seed=None):
        self.layout = setting.layout
        self.fleet = setting.fleet
        self.params = params or SimulationParams()
        self.policy = policy
        self.scenario = scenario
        self.caps = self.layout.capacities
        self.horizon = self.layout.horizon
        self.times = self.layout.network.times.astype(np.int64)
        self.dist = self.layout.network.distances
        stocks = np.asarray(stocks, dtype=np.int64)
        if len(stocks) == self.layout.n:
            stocks = np.concatenate([[0], stocks])
        if len(stocks) != self.layout.n + 1 or np.any(stocks[1:] < 0) or np.any(stocks[1:] > self.caps[1:]):
            raise InfeasibleInitialStock("initial stocks must lie within station capacities")
        self.initial = stocks.copy()
        self.state = SystemState(
            clock=0,
            stocks=stocks.copy(),
            capacities=self.caps,
            vehicles=[VehicleState(v) for v in sorted(self.fleet.vehicles, key=lambda v: v.id)],
            depot_pool=int(self.params.depot_pool),
        )
        self.vmap = {vs.id: vs for vs in self.state.vehicles}
        self.tokens = {vs.id: 0 for vs in self.state.vehicles}
        self.stats = {vs.id: VehicleStats() for vs in self.state.vehicles}
        self.seed = seed if seed is not None else scenario.seed
        self.digest = config_digest(setting, stocks[1:], self.params, extra=self.seed)
        self.record_trace = record_trace
        self.trace = [] if record_trace else None
        self.queue = []
        self.seq = 0
        self.last_key = (-1, -1, -1)
        self.missed = []
        self.realized = []
        self.n = self.layout.n
        self.since = np.zeros(self.n + 1, dtype=np.int64)
        self.empty = np.zeros(self.n + 1, dtype=np.int64)
        self.full = np.zeros(self.n + 1, dtype=np.int64)
        self.n_epochs = 0

    # --- queue -----------------------------------------------------------------

    def push(self, time, kind, payload=None):
        heapq.heappush(self.queue, (int(time), int(kind), self.seq, payload))
        self.seq += 1

    def _tokened(self, vid):
        self.tokens[vid] += 1
        return self.tokens[vid]

    # --- station bookkeeping -----------------------------------------------------

    def _close(self, i, t):
        """Credit the time since the last change to the empty/full counters.

        Safe to call at any instant; must be called before every stock change.
        """
        old = self.state.stocks[i]
        if old == 0:
            self.empty[i] += t - self.since[i]
        elif old == self.caps[i]:
            self.full[i] += t - self.since[i]
        self.since[i] = t

    # --- main loop -----------------------------------------------------------------

    def run(self):
        for t, sid, kind in self.scenario.events():
            k = EventKind.USER_RENTAL if kind == RENT else EventKind.USER_RETURN
            self.push(t, k, int(sid))
        for vs in self.state.vehicles:
            self.push(vs.vehicle.shift_start, EventKind.SHIFT_START, vs.id)
            self.push(vs.vehicle.shift_end, EventKind.SHIFT_END, vs.id)

        while self.queue:
            t, kind, seq, payload = heapq.heappop(self.queue)
            if t < self.last_key[0]:
                raise InternalOrderViolation(f"event at {t} after {self.last_key}")
            self.last_key = (t, kind, seq)
            self.state.clock = t
            handler = self._handlers[kind]
            handler(self, t, payload)

        for i in range(1, self.n + 1):
            self._close(i, self.horizon)
        return ScenarioReport(
            seed=self.seed,
            digest=self.digest,
            horizon=self.horizon,
            empty_seconds=self.empty[1:].copy(),
            full_seconds=self.full[1:].copy(),
            missed=self.missed,
            vehicles=self.stats,
            n_epochs=self.n_epochs,
            interventions=self.realized,
            trace=self.trace,
        )

    # --- user events ----------------------------------------------------------------

    def _user(self, t, sid, kind):
        self._close(sid, t)
        miss = apply_user_event(self.state.stocks, self.caps, sid, kind)
        if miss is not None:
            self.missed.append(MissedEvent(t, sid, miss))
        elif self.trace is not None:
            self.trace.append((t, sid, int(self.state.stocks[sid])))

    def on_rental(self, t, sid):
        self._user(t, sid, RENT)

    def on_return(self, t, sid):
        self._user(t, sid, 1)

    # --- vehicle events ---------------------------------------------------------------

    def on_shift_start(self, t, vid):
        vs = self.vmap[vid]
        n = min(vs.vehicle.capacity // 2, self.state.depot_pool)
        self.state.depot_pool -= n
        vs.load = n
        vs.location = DEPOT
        vs.status = VehicleStatus.IN_SERVICE
        vs.busy_until = t + n * self.params.service_time
        vs.tour = []
        self.push(vs.busy_until, EventKind.VEHICLE_DEPARTURE, (vid, self._tokened(vid)))
        self.epoch(t)

    def on_shift_end(self, t, vid):
        vs = self.vmap[vid]
        if vs.location != DEPOT or vs.status not in (VehicleStatus.IDLE, VehicleStatus.OFF_SHIFT):
            raise InternalOrderViolation(f"vehicle {vid} not parked at the depot at shift end ({vs.status})")
        self.state.depot_pool += vs.load
        vs.load = 0
        vs.status = VehicleStatus.OFF_SHIFT
        vs.tour = []
        self.tokens[vid] += 1

    def on_arrival(self, t, payload):
        vid, token = payload
        if token != self.tokens[vid]:
            return
        vs = self.vmap[vid]
        if vs.status is VehicleStatus.RETURNING:
            vs.status = VehicleStatus.IDLE
            vs.location = DEPOT
            vs.tour = []
            return
        # vehicle enters the station: re-plan with the actual stock, then serve
        self.epoch(t)
        visit = vs.tour.pop(0)
        planned = visit.amount
        i = visit.station
        self._close(i, t)
        actual = execute_visit(self.state.stocks, self.caps, vs, visit) if planned else 0
        if actual:
            if self.trace is not None:
                self.trace.append((t, i, int(self.state.stocks[i])))
            self.realized.append(Intervention(i, t, actual, vid))
            st = self.stats[vid]
            st.interventions += 1
            st.bikes_moved += abs(actual)
        self.stats[vid].shortfall += abs(planned - actual)
        vs.status = VehicleStatus.IN_SERVICE
        vs.busy_until = t + abs(actual) * self.params.service_time
        self.push(vs.busy_until, EventKind.VEHICLE_DEPARTURE, (vid, self._tokened(vid)))

    def on_departure(self, t, payload):
        vid, token = payload
        if token != self.tokens[vid]:
            return
        vs = self.vmap[vid]
        going_home = vs.status is VehicleStatus.IDLE and not vs.tour and vs.location != DEPOT
        vs.status = VehicleStatus.IDLE
        if vs.location == DEPOT:
            self.dispatch(vs, t)
            return
        if going_home:
            self._leave(vs, t, DEPOT, t + int(self.times[vs.location, DEPOT]), VehicleStatus.RETURNING)
            self.epoch(t)
            return
        self.epoch(t)
        if vs.status is VehicleStatus.IDLE:
            self.dispatch(vs, t)

    def on_idle_check(self, t, payload):
        vid, token = payload
        if token != self.tokens[vid]:
            return
        vs = self.vmap[vid]
        if vs.status is VehicleStatus.IDLE and not vs.tour:
            self.epoch(t)

    _handlers = {
        EventKind.SHIFT_START: on_shift_start,
        EventKind.IDLE_CHECK: on_idle_check,
        EventKind.VEHICLE_ARRIVAL: on_arrival,
        EventKind.USER_RENTAL: on_rental,
        EventKind.USER_RETURN: on_return,
        EventKind.VEHICLE_DEPARTURE: on_departure,
        EventKind.SHIFT_END: on_shift_end,
    }

    # --- planning -------------------------------------------------------------------

    def epoch(self, t):
        if self.policy is None:
            return
        self.n_epochs += 1
        plan = self.policy.reoptimize(self.state)
        for vs in self.state.vehicles:
            tour = plan.tours.get(vs.id, [])
            if vs.status is VehicleStatus.EN_ROUTE:
                head = tour[0] if tour else None
                if head is None or head.station != vs.location or head.arrival != vs.busy_until:
                    raise InternalOrderViolation(f"plan changed the committed leg of vehicle {vs.id}")
            if vs.status in (VehicleStatus.RETURNING, VehicleStatus.OFF_SHIFT):
                continue
            vs.tour = list(tour)
        for vs in self.state.vehicles:
            if vs.status is VehicleStatus.IDLE and t >= vs.vehicle.shift_start:
                self.dispatch(vs, t)

    def dispatch(self, vs, t):
        """Send an idle vehicle towards its next visit, or schedule its wake-up."""
        self._tokened(vs.id)
        L = vs.location
        if vs.tour:
            visit = vs.tour[0]
            c = int(self.times[L, visit.station])
            depart = visit.arrival - c
            if depart <= t:
                arrival = max(visit.arrival, t + c)
                if arrival != visit.arrival:
                    vs.tour[0] = type(visit)(visit.station, arrival, visit.amount, True)
                self._leave(vs, t, visit.station, arrival, VehicleStatus.EN_ROUTE)
            else:
                self.push(depart, EventKind.VEHICLE_DEPARTURE, (vs.id, self.tokens[vs.id]))
        else:
            # nothing to do: go home when the shift requires it, re-plan at the
            # next check time if that comes first
            home = vs.vehicle.shift_end - int(self.times[L, DEPOT]) if L != DEPOT else vs.vehicle.shift_end
            if L != DEPOT and home <= t:
                self._leave(vs, t, DEPOT, t + int(self.times[L, DEPOT]), VehicleStatus.RETURNING)
                return
            step = self.params.idle_recheck
            check = (t // step + 1) * step if step > 0 else None
            if check is not None and check < home:
                self.push(check, EventKind.IDLE_CHECK, (vs.id, self.tokens[vs.id]))
            elif L != DEPOT:
                self.push(home, EventKind.VEHICLE_DEPARTURE, (vs.id, self.tokens[vs.id]))

    def _leave(self, vs, t, dest, arrival, status):
        self.stats[vs.id].distance_m += float(self.dist[vs.location, dest])
        vs.status = status
        vs.location = dest
        vs.busy_until = arrival
        if status is VehicleStatus.RETURNING:
            vs.tour = []
        self.push(arrival, EventKind.VEHICLE_ARRIVAL, (vs.id, self._tokened(vs.id)))


def run_scenario(setting, stocks, scenario, policy=None, params=None, record_trace=False, seed=None):
    """Simulate one day and return its :class:`ScenarioReport`.

    ``policy`` is any object with ``reoptimize(state) -> Plan`` (typically a
    :class:`bikesim.optimizer.Reoptimizer`); ``None`` runs without relocation.
    """
    return Simulation(setting, stocks, scenario, policy, params, record_trace, seed).run()
