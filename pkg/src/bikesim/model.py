"""Static problem data (layout, fleet, travel network) and the mutable system state.

Times are integer seconds from midnight, distances are meters. Node 0 of the
travel network is the depot, nodes ``1..n`` are the stations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "DAY",
    "DEPOT",
    "EARTH_RADIUS_M",
    "Fleet",
    "Issue",
    "Layout",
    "PlannedVisit",
    "Setting",
    "Station",
    "SystemState",
    "TravelNetwork",
    "UnknownNode",
    "ValidationError",
    "Vehicle",
    "VehicleState",
    "VehicleStatus",
    "haversine",
    "layout_from_dict",
    "layout_to_dict",
    "fleet_from_dict",
    "fleet_to_dict",
    "load_fleet",
    "load_layout",
    "setting_issues",
    "travel_time",
    "validate_setting",
]

DAY = 86400
DEPOT = 0
EARTH_RADIUS_M = 6371008.8
DEFAULT_SPEED_KMH = 20.0


class UnknownNode(KeyError):
    pass


@dataclass(frozen=True)
class Issue:
    """One invariant violation found while validating a setting."""

    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


class ValidationError(ValueError):
    """Raised with the complete list of violations of a setting."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))

    @property
    def codes(self):
        return [i.code for i in self.issues]


def haversine(lat1, lon1, lat2, lon2, radius=EARTH_RADIUS_M):
    """Great-circle distance in meters between two lat/lon points (degrees)."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * radius * math.asin(min(1.0, math.sqrt(a)))


@dataclass(frozen=True, eq=False)
class TravelNetwork:
    """Complete directed graph over depot and stations.

    ``times[i, j]`` is the travel time in seconds and ``distances[i, j]`` the
    distance in meters. Missing entries are NaN until validation rejects them.
    """

    times: np.ndarray
    distances: np.ndarray
    speed_kmh: float | None = None

    @property
    def n_nodes(self):
        return self.times.shape[0]

    @classmethod
    def from_matrix(cls, times, distances=None):
        times = np.asarray(times, dtype=float)
        if distances is None:
            distances = np.zeros_like(times)
        return cls(times=times, distances=np.asarray(distances, dtype=float))

    @classmethod
    def from_coordinates(cls, coords, speed_kmh=DEFAULT_SPEED_KMH):
        """Build times and distances from ``[(lat, lon), ...]`` with node 0 the depot.

        Times are haversine distance over constant speed, rounded to whole seconds.
        """
        n = len(coords)
        dist = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if i != j:
                    dist[i, j] = haversine(*coords[i], *coords[j])
        speed = speed_kmh / 3.6
        times = np.rint(dist / speed)
        return cls(times=times, distances=dist, speed_kmh=speed_kmh)

    def time(self, i, j):
        return travel_time(self, i, j)


def travel_time(network, i, j):
    """Travel time in whole seconds from node ``i`` to node ``j``."""
    n = network.n_nodes
    for node in (i, j):
        if not (isinstance(node, (int, np.integer)) and 0 <= node < n):
            raise UnknownNode(node)
    return int(network.times[i, j])


@dataclass(frozen=True)
class Station:
    id: int
    capacity: int
    name: str = ""
    lat: float | None = None
    lon: float | None = None


@dataclass(frozen=True, eq=False)
class Layout:
    network: TravelNetwork
    stations: tuple[Station, ...]
    horizon: int = DAY
    depot_coords: tuple[float, float] | None = None

    @property
    def n(self):
        return len(self.stations)

    @property
    def capacities(self):
        """Capacities indexed by station id (index 0 unused, set to 0)."""
        caps = np.zeros(self.n + 1, dtype=np.int64)
        for s in self.stations:
            caps[s.id] = s.capacity
        return caps

    def station(self, sid):
        for s in self.stations:
            if s.id == sid:
                return s
        raise UnknownNode(sid)


@dataclass(frozen=True)
class Vehicle:
    id: int
    capacity: int
    shift_start: int
    shift_end: int


@dataclass(frozen=True)
class Fleet:
    vehicles: tuple[Vehicle, ...] = ()

    def __len__(self):
        return len(self.vehicles)

    def __iter__(self):
        return iter(self.vehicles)


@dataclass(frozen=True, eq=False)
class Setting:
    layout: Layout
    fleet: Fleet


@dataclass(frozen=True)
class PlannedVisit:
    """A planned stop: arrive at ``station`` at ``arrival`` and exchange ``amount``.

    Positive amounts unload bikes from the vehicle to the station.
    """

    station: int
    arrival: int
    amount: int
    committed: bool = False


def setting_issues(layout, fleet):
    """Return every invariant violation of a (layout, fleet) pair."""
    issues = []
    add = lambda code, msg: issues.append(Issue(code, msg))

    if not layout.horizon > 0:
        add("NonPositiveHorizon", f"horizon {layout.horizon} must be positive")

    seen = set()
    for s in layout.stations:
        if s.id in seen:
            add("DuplicateStationId", f"station id {s.id} appears more than once")
        seen.add(s.id)
        if not (isinstance(s.capacity, (int, np.integer)) and s.capacity >= 1):
            add("NonPositiveCapacity", f"station {s.id} has capacity {s.capacity}")
    if seen and sorted(seen) != list(range(1, len(seen) + 1)):
        add("NonContiguousStationIds", "station ids must be exactly 1..n")

    net = layout.network
    if net.times.ndim != 2 or net.times.shape[0] != net.times.shape[1]:
        add("MissingTravelEntry", "travel time matrix must be square")
    else:
        if net.n_nodes != len(layout.stations) + 1:
            add(
                "StationCountMismatch",
                f"travel network has {net.n_nodes} nodes for {len(layout.stations)} stations plus depot",
            )
        for name, mat in (("time", net.times), ("distance", net.distances)):
            if mat.shape != net.times.shape:
                add("MissingTravelEntry", f"{name} matrix has shape {mat.shape}")
                continue
            missing = np.argwhere(~np.isfinite(mat))
            for i, j in missing:
                add("MissingTravelEntry", f"no travel {name} for arc ({i}, {j})")
            finite = np.where(np.isfinite(mat), mat, 0.0)
            for i, j in np.argwhere(finite < 0):
                code = "NegativeTravelTime" if name == "time" else "NegativeDistance"
                add(code, f"travel {name} ({i}, {j}) = {mat[i, j]}")
            diag = np.diag(finite)
            for i in np.flatnonzero(diag != 0):
                add("NonZeroDiagonal", f"travel {name} ({i}, {i}) = {mat[i, i]}")
        frac = np.where(np.isfinite(net.times), net.times % 1, 0.0)
        if np.any(frac != 0):
            add("NonIntegerTravelTime", "travel times must be whole seconds")

    ids = set()
    for v in fleet.vehicles:
        if v.id in ids:
            add("DuplicateVehicleId", f"vehicle id {v.id} appears more than once")
        ids.add(v.id)
        if not v.capacity >= 1:
            add("NonPositiveCapacity", f"vehicle {v.id} has capacity {v.capacity}")
        if not (0 <= v.shift_start < v.shift_end <= layout.horizon):
            add(
                "ShiftOutsideHorizon",
                f"vehicle {v.id} shift [{v.shift_start}, {v.shift_end}] not within "
                f"[0, {layout.horizon}] or empty",
            )
    return issues


def validate_setting(layout, fleet):
    """Return the setting if every invariant holds, otherwise raise ValidationError
    carrying all violations at once."""
    issues = setting_issues(layout, fleet)
    if issues:
        raise ValidationError(issues)
    return Setting(layout=layout, fleet=fleet)


# --- JSON documents ------------------------------------------------------------


def _matrix(rows):
    return np.array([[np.nan if x is None else float(x) for x in r] for r in rows])


def layout_from_dict(doc):
    stations = tuple(
        Station(
            id=int(s["id"]),
            capacity=s["capacity"],
            name=s.get("name", ""),
            lat=s.get("lat"),
            lon=s.get("lon"),
        )
        for s in doc["stations"]
    )
    horizon = int(doc.get("horizon_s", DAY))
    travel = doc.get("travel", {})
    depot = doc.get("depot")
    depot_coords = (depot["lat"], depot["lon"]) if depot else None
    if "matrix" in travel:
        m = travel["matrix"]
        times = _matrix(m["time_s"])
        dist = _matrix(m["distance_m"]) if "distance_m" in m else np.zeros_like(times)
        network = TravelNetwork.from_matrix(times, dist)
    else:
        speed = float(travel.get("speed_kmh", DEFAULT_SPEED_KMH))
        if depot_coords is None:
            raise ValidationError([Issue("MissingTravelEntry", "coordinate mode needs depot lat/lon")])
        by_id = sorted(stations, key=lambda s: s.id)
        missing = [s.id for s in by_id if s.lat is None or s.lon is None]
        if missing:
            raise ValidationError(
                [Issue("MissingTravelEntry", f"station {sid} has no coordinates") for sid in missing]
            )
        coords = [depot_coords] + [(s.lat, s.lon) for s in by_id]
        network = TravelNetwork.from_coordinates(coords, speed)
    return Layout(network=network, stations=stations, horizon=horizon, depot_coords=depot_coords)


def layout_to_dict(layout, inline_matrix=None):
    doc = {"horizon_s": layout.horizon, "stations": []}
    for s in layout.stations:
        d = {"id": s.id, "capacity": int(s.capacity)}
        if s.name:
            d["name"] = s.name
        if s.lat is not None:
            d["lat"], d["lon"] = s.lat, s.lon
        doc["stations"].append(d)
    if layout.depot_coords is not None:
        doc["depot"] = {"lat": layout.depot_coords[0], "lon": layout.depot_coords[1]}
    net = layout.network
    if inline_matrix is None:
        inline_matrix = net.speed_kmh is None or layout.depot_coords is None
    if inline_matrix:
        doc["travel"] = {
            "matrix": {
                "time_s": net.times.astype(int).tolist(),
                "distance_m": np.round(net.distances, 3).tolist(),
            }
        }
    else:
        doc["travel"] = {"speed_kmh": net.speed_kmh}
    return doc


def fleet_from_dict(doc):
    return Fleet(
        tuple(
            Vehicle(
                id=int(v["id"]),
                capacity=v["capacity"],
                shift_start=int(v["shift_start_s"]),
                shift_end=int(v["shift_end_s"]),
            )
            for v in doc.get("vehicles", [])
        )
    )


def fleet_to_dict(fleet):
    return {
        "vehicles": [
            {
                "id": v.id,
                "capacity": v.capacity,
                "shift_start_s": v.shift_start,
                "shift_end_s": v.shift_end,
            }
            for v in fleet.vehicles
        ]
    }


def load_layout(path):
    return layout_from_dict(json.loads(Path(path).read_text()))


def load_fleet(path):
    return fleet_from_dict(json.loads(Path(path).read_text()))


# --- dynamic state -------------------------------------------------------------


class VehicleStatus(Enum):
    WAITING_SHIFT = "waiting_shift"  # shift not started, parked at depot
    IN_SERVICE = "in_service"  # loading/unloading at its location
    IDLE = "idle"  # parked at its location, free to leave
    EN_ROUTE = "en_route"  # travelling to ``location``, arriving at ``busy_until``
    RETURNING = "returning"  # travelling to the depot for shift end
    OFF_SHIFT = "off_shift"


@dataclass
class VehicleState:
    vehicle: Vehicle
    status: VehicleStatus = VehicleStatus.WAITING_SHIFT
    location: int = DEPOT
    load: int = 0
    busy_until: int = 0
    tour: list[PlannedVisit] = field(default_factory=list)

    @property
    def id(self):
        return self.vehicle.id


@dataclass
class SystemState:
    """Clock, station stocks (indexed by station id, slot 0 unused), vehicles, depot pool."""

    clock: int
    stocks: np.ndarray
    capacities: np.ndarray
    vehicles: list[VehicleState]
    depot_pool: int

    def check(self):
        assert self.depot_pool >= 0
        assert np.all(self.stocks[1:] >= 0) and np.all(self.stocks[1:] <= self.capacities[1:])
        for v in self.vehicles:
            assert 0 <= v.load <= v.vehicle.capacity
