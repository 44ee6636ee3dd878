"""Random micro-instances and system states for the tests."""

from __future__ import annotations

import numpy as np

from bikesim.demand import DemandModel, RateFunction, StationDemand, forecast_curves
from bikesim.model import (
    DEPOT,
    Fleet,
    Layout,
    Station,
    SystemState,
    TravelNetwork,
    Vehicle,
    VehicleState,
    VehicleStatus,
    validate_setting,
)


def grid_layout(capacities, times, horizon):
    """Layout with an explicit travel-time matrix (distances = 5 m/s * time)."""
    times = np.asarray(times, dtype=float)
    stations = tuple(Station(i + 1, int(c)) for i, c in enumerate(capacities))
    return Layout(TravelNetwork.from_matrix(times, times * 5.0), stations, horizon)


def random_rates(rng, horizon, width, scale):
    m = -(-horizon // width)
    r = rng.uniform(0, scale, m) * (rng.random(m) < 0.8)
    return RateFunction.from_pieces(np.round(r, 3), width, horizon)


def micro_instance(rng, n_stations=None, horizon=14400, width=900, n_vehicles=None):
    """A random small city: ``(setting, demand, forecasts)``."""
    n = int(rng.integers(2, 7)) if n_stations is None else n_stations
    caps = rng.integers(3, 13, n)
    xy = rng.uniform(0, 3000, (n + 1, 2))
    d = np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1))
    times = np.rint(d / 5.0)
    layout = grid_layout(caps, times, horizon)
    stations = {}
    for sid in range(1, n + 1):
        bias = rng.uniform(0.3, 3.0)
        ret = random_rates(rng, horizon, width, 10 * bias)
        rent = random_rates(rng, horizon, width, 10 / bias)
        stations[sid] = StationDemand(returns=ret, rentals=rent)
    demand = DemandModel(stations)
    k = int(rng.integers(0, 3)) if n_vehicles is None else n_vehicles
    vehicles = []
    for vid in range(1, k + 1):
        a = int(rng.integers(0, horizon // 2))
        b = int(rng.integers(a + 600, horizon + 1))
        vehicles.append(Vehicle(vid, int(rng.integers(2, 9)), a, b))
    setting = validate_setting(layout, Fleet(tuple(vehicles)))
    return setting, demand, forecast_curves(demand)


def random_state(rng, setting, t0=None):
    """A plausible mid-day state: random stocks and a random status per vehicle."""
    layout = setting.layout
    H = layout.horizon
    t0 = int(rng.integers(0, H - 600)) if t0 is None else t0
    caps = layout.capacities
    stocks = np.zeros(layout.n + 1, dtype=np.int64)
    for sid in range(1, layout.n + 1):
        stocks[sid] = rng.integers(0, caps[sid] + 1)
    vehicles = []
    for veh in setting.fleet:
        vs = VehicleState(veh)
        if t0 < veh.shift_start:
            vs.status = VehicleStatus.WAITING_SHIFT
        elif t0 >= veh.shift_end:
            vs.status = VehicleStatus.OFF_SHIFT
        else:
            vs.status = rng.choice(
                [VehicleStatus.IDLE, VehicleStatus.IN_SERVICE, VehicleStatus.EN_ROUTE, VehicleStatus.RETURNING]
            )
            vs.load = int(rng.integers(0, veh.capacity + 1))
            if vs.status is VehicleStatus.EN_ROUTE:
                vs.location = int(rng.integers(1, layout.n + 1))
                vs.busy_until = t0 + int(rng.integers(0, 600))
            elif vs.status is VehicleStatus.RETURNING:
                vs.location = DEPOT
                vs.busy_until = t0 + int(rng.integers(0, 600))
            else:
                vs.location = int(rng.integers(0, layout.n + 1))
                vs.busy_until = t0 + (int(rng.integers(0, 300)) if vs.status is VehicleStatus.IN_SERVICE else 0)
        vehicles.append(vs)
    pool = int(rng.choice([0, 3, 10**9]))
    return SystemState(clock=t0, stocks=stocks, capacities=caps, vehicles=vehicles, depot_pool=pool)


def random_projection_case(rng):
    """One station with at most 4 rate pieces on integer breakpoints, an integer
    anchor and at most 3 interventions: ``(station, demand, forecast, anchor, stock, ivs)``."""
    H = int(rng.integers(3600, 7201))
    m = int(rng.integers(1, 5))
    cuts = np.sort(rng.choice(np.arange(1, H), m - 1, replace=False)) if m > 1 else np.array([], int)
    bp = np.concatenate([[0], cuts, [H]])

    def rates():
        r = rng.uniform(0, 60, m)
        r[rng.random(m) < 0.2] = 0.0
        return RateFunction(bp, r)

    ret, rent = rates(), rates()
    u = int(rng.integers(1, 31))
    station = Station(1, u)
    demand = DemandModel({1: StationDemand(returns=ret, rentals=rent)})
    anchor = int(rng.integers(0, H // 2))
    stock = int(rng.integers(0, u + 1))
    k = int(rng.integers(0, 4))
    times = np.sort(rng.integers(anchor, H, k))
    ivs = [(int(t), int(rng.choice([-1, 1]) * rng.integers(1, u + 1))) for t in times]
    return station, demand, forecast_curves(demand)[1], anchor, stock, ivs
