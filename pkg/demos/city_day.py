"""One day on the 86-station city with three morning and three afternoon vehicles."""

import sys

from bikesim.demand import forecast_curves, sample_scenario
from bikesim.instances import bundled, shift_fleet
from bikesim.model import Fleet, fleet_from_dict, validate_setting
from bikesim.optimizer import PlanningModel, Reoptimizer
from bikesim.simulator import run_scenario

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
layout, demand, stocks = bundled("city86")
shifts = [(25200, 54000), (41400, 70200)]  # morning, afternoon
scenario = sample_scenario(demand, seed)

idle = run_scenario(validate_setting(layout, Fleet()), stocks, scenario)
fleet = fleet_from_dict(shift_fleet((3, 3), shifts))
policy = Reoptimizer(PlanningModel(layout, forecast_curves(demand)))
served = run_scenario(validate_setting(layout, fleet), stocks, scenario, policy, seed=seed)

print(f"scenario {seed}: {scenario.count()} requests")
for label, rep in (("no vehicles", idle), ("6 vehicles", served)):
    print(f"  {label:12s} empty {rep.total_empty_hours:7.2f} h  full {rep.total_full_hours:7.2f} h  "
          f"missed rentals {rep.missed_rentals:4d}  missed returns {rep.missed_returns:4d}")
print(f"{served.n_epochs} epochs; first decisions:")
for d in policy.trace[:8]:
    print("  " + d.log_line())
