"""Run the bundled shift grid and print the mean total shortage hours per cell."""

import sys
from pathlib import Path

from bikesim.experiment import emit_reports, load_config, run_grid

here = Path(__file__).parent
cfg = load_config(here / "configs" / "synthetic10_grid.json")
if len(sys.argv) > 1:
    cfg.scenarios = int(sys.argv[1])
report = run_grid(cfg)
table = report.mean_table("total_hours")
rows = sorted({m for m, _ in table})
cols = sorted({a for _, a in table})
print("morning \\ afternoon " + "".join(f"{a:>9d}" for a in cols))
for m in rows:
    print(f"{m:>19d} " + "".join(f"{table[(m, a)]:9.2f}" if (m, a) in table else " " * 9 for a in cols))
out = here / "out" / "synthetic10_grid"
emit_reports(report, out)
print(f"reports written to {out}")
