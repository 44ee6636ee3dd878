"""One station: forecast, censored projection, shortages and the effect of a visit."""

import numpy as np

from bikesim.demand import DemandModel, RateFunction, StationDemand, forecast_curves
from bikesim.model import Station
from bikesim.projection import Intervention, detect_shortages, project_stock, shortage_delay, total_lost

HOUR = 3600
H = 6 * HOUR

# a commuter station: heavy morning rentals, returns in the afternoon
bp = np.array([0, 2 * HOUR, 4 * HOUR, H])
returns = RateFunction(bp, np.array([1.0, 2.0, 8.0]))
rentals = RateFunction(bp, np.array([9.0, 3.0, 1.0]))
demand = DemandModel({1: StationDemand(returns=returns, rentals=rentals)})
fc = forecast_curves(demand)[1]
station = Station(1, capacity=15)

base = project_stock(station, 0, 6, fc)
before = detect_shortages(base, rentals, returns)
print("without a visit")
for s in before:
    print(f"  {s.kind.name.lower()} shortage {s.start / HOUR:.2f} h to {s.end / HOUR:.2f} h, "
          f"expected lost {s.expected_lost:.2f}")

visit = project_stock(station, 0, 6, fc, [Intervention(1, 0.5 * HOUR, 8)])
after = detect_shortages(visit, rentals, returns)
print("unloading 8 bikes at 0.5 h")
for s in after:
    print(f"  {s.kind.name.lower()} shortage {s.start / HOUR:.2f} h to {s.end / HOUR:.2f} h, "
          f"expected lost {s.expected_lost:.2f}")
print(f"expected lost {total_lost(before):.2f} -> {total_lost(after):.2f}, "
      f"first shortage delayed by {shortage_delay(before, after, H) / 60:.0f} min")
