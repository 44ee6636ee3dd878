"""Greedy reoptimization of the relocation plan at each epoch.

Each epoch: re-evaluate the exchange amount at every vehicle's current or
committed destination, drop all other planned visits, rank stations by their
first forecast shortage (quarter-hour group, then expected loss), and give each
station in turn to the vehicle whose visit removes the most expected loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .model import DEPOT, PlannedVisit, VehicleStatus

__all__ = [
    "QUARTER",
    "Decision",
    "Plan",
    "PlanningModel",
    "SlotArrays",
    "Reoptimizer",
    "StationPriority",
    "VehicleSlot",
    "best_vehicle_assignment",
    "prioritize_stations",
    "quantize",
]

QUARTER = 900


def quantize(x, scale):
    """Round ``x * scale`` to the nearest integer (ties up); used to compare
    floating-point scores without sensitivity to the last bits."""
    return int(math.floor(x * scale + 0.5))


@dataclass(frozen=True)
class StationPriority:
    station: int
    first_start: float
    expected_lost: float

    @property
    def group(self):
        return int(self.first_start // QUARTER)

    def sort_key(self):
        return (self.group, -self.expected_lost, self.station)


def prioritize_stations(shortages):
    """Order stations by their first shortage.

    ``shortages`` maps station id to its shortage list. Stations whose first
    shortage falls in the same wall-clock quarter hour are ordered by larger
    expected loss of that shortage, then by id.
    """
    out = []
    for sid, ss in shortages.items():
        if ss:
            first = min(ss, key=lambda s: s.start)
            out.append(StationPriority(sid, first.start, first.expected_lost))
    return sorted(out, key=StationPriority.sort_key)


@dataclass(frozen=True)
class Decision:
    epoch: int
    station: int
    vehicle: int
    amount: int
    arrival: int
    score: float
    committed: bool = False

    def log_line(self):
        tag = "reeval" if self.committed else "assign"
        return (
            f"{self.epoch}\t{tag}\tstation={self.station}\tvehicle={self.vehicle}"
            f"\tamount={self.amount}\tarrival={self.arrival}\tscore={self.score:.9f}"
        )


@dataclass
class Plan:
    epoch: int
    tours: dict[int, list[PlannedVisit]] = field(default_factory=dict)
    decisions: list[Decision] = field(default_factory=list)

    def visits(self):
        """Flat ``(vehicle, station, arrival, amount, committed)`` tuples, for diffing."""
        return [
            (vid, pv.station, pv.arrival, pv.amount, pv.committed)
            for vid in sorted(self.tours)
            for pv in self.tours[vid]
        ]


@dataclass
class VehicleSlot:
    """Where and when a vehicle becomes free after its already planned work."""

    id: int
    capacity: int
    shift_end: int
    location: int
    ready: int
    load: int


class PlanningModel:
    """Forecast and layout data packed as arrays for the compiled kernels."""

    def __init__(self, layout, forecasts, service_time=60):
        if service_time <= 0:
            raise ValueError("service time per bike must be positive")
        self.layout = layout
        self.service_time = int(service_time)
        self.horizon = layout.horizon
        self.n = layout.n
        self.times = layout.network.times.astype(np.int64)
        self.caps = layout.capacities.astype(float)
        bps, gs, rents, rets, offsets = [], [], [], [], [0]
        self.station_arrays = {}
        for sid in range(1, self.n + 1):
            fc = forecasts[sid]
            if fc.times[-1] != layout.horizon:
                raise ValueError(f"forecast of station {sid} does not end at the horizon")
            arrs = (
                np.ascontiguousarray(fc.times, dtype=float),
                np.ascontiguousarray(fc.slopes, dtype=float),
                np.ascontiguousarray(fc.rental_rate, dtype=float),
                np.ascontiguousarray(fc.return_rate, dtype=float),
            )
            self.station_arrays[sid] = arrs
            bps.append(arrs[0])
            gs.append(arrs[1])
            rents.append(arrs[2])
            rets.append(arrs[3])
            offsets.append(offsets[-1] + len(arrs[0]))
        self.offsets = np.array(offsets, dtype=np.int64)
        self.bp = np.concatenate(bps)
        self.g = np.concatenate(gs)
        self.rent = np.concatenate(rents)
        self.ret = np.concatenate(rets)

    def scan_stations(self, t0, stocks):
        """Total loss, first shortage start and first loss for every station (index 0 = station 1)."""
        return K.scan_all(
            self.offsets, self.bp, self.g, self.rent, self.ret, self.caps[1:], float(t0),
            np.asarray(stocks[1:], dtype=float),
        )

    def scan(self, sid, t0, stock, it=None, ia=None):
        bp, g, rent, ret = self.station_arrays[sid]
        it = np.empty(0) if it is None else np.asarray(it, dtype=float)
        ia = np.empty(0) if ia is None else np.asarray(ia, dtype=float)
        return K.scan(bp, g, rent, ret, self.caps[sid], float(t0), float(stock), it, ia)


class SlotArrays:
    """Column view of vehicle slots for the compiled assignment kernel."""

    def __init__(self, slots):
        self.slots = slots
        self.id = np.array([s.id for s in slots], dtype=np.int64)
        self.capacity = np.array([s.capacity for s in slots], dtype=np.int64)
        self.shift_end = np.array([s.shift_end for s in slots], dtype=np.int64)
        self.ready = np.array([s.ready for s in slots], dtype=np.int64)
        self.load = np.array([s.load for s in slots], dtype=np.int64)
        self.location = np.array([s.location for s in slots], dtype=np.int64)

    def assign(self, k, visit, service_time):
        """Append ``visit`` to slot ``k``: it is free again after its service there."""
        slot = self.slots[k]
        slot.location = visit.station
        slot.ready = visit.arrival + abs(visit.amount) * service_time
        slot.load -= visit.amount
        self.location[k], self.ready[k], self.load[k] = slot.location, slot.ready, slot.load


def _assign(model, station, t0, stock, base_total, base_first, cols):
    bp, g, rent, ret = model.station_arrays[station]
    k, score, T, O = K.best_assignment(
        bp, g, rent, ret, model.caps[station], float(t0), float(stock), float(base_total), float(base_first),
        cols.id, cols.capacity, cols.shift_end, cols.ready, cols.load,
        model.times[cols.location, station], int(model.times[station, DEPOT]), model.service_time,
    )
    if k < 0:
        return None
    return int(k), PlannedVisit(station, int(T), int(O)), float(score)


def best_vehicle_assignment(model, station, t0, stock, base_total, base_first, slots):
    """Best vehicle, arrival and amount to reduce the station's expected loss.

    Every vehicle tries every amount within its load (or free room) and the
    station capacity, each at the earliest integer time it can be there at
    which the amount fits the projected stock. Candidates are ranked by loss
    reduction, then shortage delay, earlier arrival, lower vehicle id, larger
    clearance of the projection from both bounds after the visit, smaller
    amount, unloading before loading.

    Returns ``(slot, PlannedVisit, score)`` or ``None`` when no feasible visit
    has a strictly positive loss reduction.
    """
    if not slots:
        return None
    res = _assign(model, station, t0, stock, base_total, base_first, SlotArrays(slots))
    if res is None:
        return None
    k, visit, score = res
    return slots[k], visit, score


class Reoptimizer:
    """Policy object called by the simulator at each epoch."""

    def __init__(self, model, lookahead=7200):
        self.model = model
        self.lookahead = lookahead
        self.trace = []

    def slots_and_commitments(self, state, plan):
        """Re-evaluate committed visits and compute where each vehicle will be free."""
        m = self.model
        t0 = state.clock
        svc = m.service_time
        pool = state.depot_pool
        waiting_load = {}
        waiting = [v for v in state.vehicles if v.status is VehicleStatus.WAITING_SHIFT]
        for vs in sorted(waiting, key=lambda v: (v.vehicle.shift_start, v.id)):
            n = min(vs.vehicle.capacity // 2, pool)
            pool -= n
            waiting_load[vs.id] = n

        committed = {}  # station -> ([times], [amounts])
        slots = []
        for vs in sorted(state.vehicles, key=lambda v: v.id):
            veh = vs.vehicle
            plan.tours[vs.id] = []
            st = vs.status
            if st in (VehicleStatus.OFF_SHIFT, VehicleStatus.RETURNING):
                continue
            if st is VehicleStatus.EN_ROUTE:
                j, A = vs.location, vs.busy_until
                it, ia = committed.setdefault(j, ([], []))
                max_mag = max(0, (veh.shift_end - int(m.times[j, DEPOT]) - A) // svc)
                bp, g, rent, ret = m.station_arrays[j]
                score, _, O = K.best_amount_at(
                    bp, g, rent, ret, m.caps[j], float(t0), float(state.stocks[j]),
                    np.array(it, dtype=float), np.array(ia, dtype=float), A,
                    vs.load, veh.capacity - vs.load, max_mag,
                )
                O = int(O)
                if O != 0:
                    it.append(float(A))
                    ia.append(float(O))
                plan.tours[vs.id].append(PlannedVisit(j, A, O, committed=True))
                plan.decisions.append(Decision(t0, j, vs.id, O, A, score, committed=True))
                slots.append(VehicleSlot(vs.id, veh.capacity, veh.shift_end, j, A + abs(O) * svc, vs.load - O))
            elif st is VehicleStatus.IN_SERVICE:
                slots.append(VehicleSlot(vs.id, veh.capacity, veh.shift_end, vs.location, vs.busy_until, vs.load))
            elif st is VehicleStatus.IDLE:
                slots.append(VehicleSlot(vs.id, veh.capacity, veh.shift_end, vs.location, t0, vs.load))
            else:  # waiting for its shift: loads half its capacity at the depot first
                n = waiting_load[vs.id]
                slots.append(
                    VehicleSlot(vs.id, veh.capacity, veh.shift_end, DEPOT, veh.shift_start + n * svc, n)
                )
        return slots, committed

    def priorities(self, state, exclude=()):
        total, first, first_lost = self.model.scan_stations(state.clock, state.stocks)
        out = [
            StationPriority(s + 1, float(first[s]), float(first_lost[s]))
            for s in np.flatnonzero(total > 0)
            if s + 1 not in exclude
            and (self.lookahead is None or first[s] - state.clock <= self.lookahead)
        ]
        out.sort(key=StationPriority.sort_key)
        return out, total, first

    def reoptimize(self, state):
        plan = Plan(epoch=state.clock)
        slots, committed = self.slots_and_commitments(state, plan)
        prios, total, first = self.priorities(state, exclude=committed)
        if slots:
            cols = SlotArrays(slots)
            for p in prios:
                s = p.station
                res = _assign(self.model, s, state.clock, state.stocks[s], total[s - 1], first[s - 1], cols)
                if res is None:
                    continue
                k, visit, score = res
                vid = slots[k].id
                plan.tours[vid].append(visit)
                plan.decisions.append(Decision(state.clock, s, vid, visit.amount, visit.arrival, score))
                cols.assign(k, visit, self.model.service_time)
        self.trace.extend(plan.decisions)
        return plan
