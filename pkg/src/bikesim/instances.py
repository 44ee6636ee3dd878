"""Synthetic instances shipped with the package.

``synthetic10`` is a small 10-station city used by the examples and the
acceptance suite; ``city86`` mirrors the size and capacity histogram of a
real 86-station system (capacities 6 to 30, mode 10). Demand is made up:
commuter peaks in the morning and evening plus a smaller lunch peak, with
residential stations emptying in the morning and central ones filling up.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .demand import demand_from_dict
from .model import DAY, layout_from_dict

__all__ = ["BUNDLED", "bundled", "city_capacities", "load_bundled_docs", "make_instance", "shift_fleet"]

BUNDLED = ("synthetic10", "city86")

CENTER = (45.5416, 10.2118)
PIECE = 900


def city_capacities():
    """86 capacities: 37 stations of 10, 7 of 6, one of 30, the rest 8 to 20."""
    caps = [10] * 37 + [6] * 7 + [30] + [8] * 14 + [12] * 15 + [14] * 8 + [16] * 3 + [20]
    assert len(caps) == 86
    return caps


def _bump(hours, center, width):
    return np.exp(-0.5 * ((hours - center) / width) ** 2)


def make_instance(capacities, seed=7, side_km=7.4, intensity=1.0, base_share=0.8, peak_share=3.2):
    """Return ``(layout_doc, demand_doc, stocks_doc)`` for the given capacities."""
    rng = np.random.default_rng(seed)
    n = len(capacities)
    caps = np.array(capacities)
    order = rng.permutation(n)
    caps = caps[order]
    half = side_km / 2.0
    dx = rng.uniform(-half, half, n)
    dy = rng.uniform(-half, half, n)
    lat = CENTER[0] + dy / 111.2
    lon = CENTER[1] + dx / (111.2 * np.cos(np.radians(CENTER[0])))
    radius = np.hypot(dx, dy)
    # the largest station is the train station, closest to the centre half are "central"
    central = radius <= np.median(radius)
    transit = int(np.argmax(caps))

    hours = (np.arange(DAY // PIECE) + 0.5) * PIECE / 3600.0
    daytime = 0.15 + 0.85 * _bump(hours, 14.0, 4.5)
    morning = _bump(hours, 8.25, 1.0)
    lunch = _bump(hours, 13.5, 0.6)
    evening = _bump(hours, 18.0, 1.1)

    stations_layout, stations_demand = [], []
    for i in range(n):
        scale = intensity * (0.6 + 0.08 * caps[i]) * rng.uniform(0.8, 1.2)
        base = base_share * scale * daytime
        peak = peak_share * scale
        if i == transit:
            rent = base + peak * (0.9 * morning + 0.4 * lunch + 1.2 * evening)
            ret = base + peak * (1.3 * morning + 0.4 * lunch + 0.8 * evening)
        elif central[i]:
            rent = base + peak * (0.3 * morning + 0.5 * lunch + 1.0 * evening)
            ret = base + peak * (1.0 * morning + 0.3 * lunch + 0.3 * evening)
        else:
            rent = base + peak * (1.0 * morning + 0.3 * lunch + 0.3 * evening)
            ret = base + peak * (0.3 * morning + 0.5 * lunch + 1.0 * evening)
        sid = i + 1
        stations_layout.append(
            {"id": sid, "capacity": int(caps[i]), "name": f"S{sid:02d}",
             "lat": round(float(lat[i]), 6), "lon": round(float(lon[i]), 6)}
        )
        stations_demand.append(
            {"id": sid, "return_rates": np.round(ret, 4).tolist(), "rental_rates": np.round(rent, 4).tolist()}
        )
    layout = {
        "horizon_s": DAY,
        "depot": {"lat": CENTER[0], "lon": CENTER[1]},
        "stations": stations_layout,
        "travel": {"speed_kmh": 20.0},
    }
    demand = {
        "tags": {"day_type": "working", "month": "May", "weather": "sunny"},
        "piece_width_s": PIECE,
        "horizon_s": DAY,
        "stations": stations_demand,
    }
    stocks = {"stocks": {str(s["id"]): int(round(s["capacity"] / 2)) for s in stations_layout}}
    return layout, demand, stocks


def shift_fleet(counts, shifts, capacity=14):
    """Fleet document with ``counts[k]`` vehicles on shift ``shifts[k] = (start, end)``."""
    vehicles = []
    for n, (start, end) in zip(counts, shifts):
        for _ in range(n):
            vehicles.append({"id": len(vehicles) + 1, "capacity": capacity,
                             "shift_start_s": int(start), "shift_end_s": int(end)})
    return {"vehicles": vehicles}


def load_bundled_docs(name):
    """Raw JSON documents ``(layout, demand, stocks)`` of a bundled instance."""
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled instance {name!r}; choose from {BUNDLED}")
    base = resources.files("bikesim") / "data"
    read = lambda kind: json.loads((base / f"{name}_{kind}.json").read_text())
    return read("layout"), read("demand"), read("stocks")


def bundled(name):
    """Parsed ``(layout, demand_model, stocks)`` of a bundled instance.

    ``stocks`` is an int array indexed by station id (slot 0 unused).
    """
    ldoc, ddoc, sdoc = load_bundled_docs(name)
    layout = layout_from_dict(ldoc)
    demand = demand_from_dict(ddoc, layout.horizon)
    stocks = np.zeros(layout.n + 1, dtype=np.int64)
    for k, v in sdoc["stocks"].items():
        stocks[int(k)] = v
    return layout, demand, stocks


def _write_bundled(target):
    """Regenerate the bundled JSON files (run once; outputs are committed)."""
    specs = {
        "synthetic10": make_instance([10, 6, 12, 10, 8, 14, 10, 20, 10, 12], seed=11),
        "city86": make_instance(city_capacities(), seed=5),
    }
    for name, docs in specs.items():
        for kind, doc in zip(("layout", "demand", "stocks"), docs):
            (target / f"{name}_{kind}.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

