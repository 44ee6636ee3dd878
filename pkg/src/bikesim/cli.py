"""Command-line front end: ``bikesim {validate,simulate,grid,sample-scenarios}``.

Exit status: 0 on success, 1 when inputs fail validation, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .demand import sample_scenario
from .experiment import (
    BatchError,
    ConfigError,
    config_from_dict,
    emit_batch,
    emit_reports,
    load_config,
    load_manifest,
    run_batch,
    run_grid,
)
from .model import (
    ValidationError,
    fleet_from_dict,
    fleet_to_dict,
    layout_from_dict,
    setting_issues,
    validate_setting,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _input_args(p, fleet=True):
    p.add_argument("--config", help="experiment config (JSON); explicit flags override it")
    p.add_argument("--instance", help="bundled instance name (layout, demand and stocks)")
    p.add_argument("--layout", help="layout document")
    p.add_argument("--demand", help="demand model used to sample scenarios")
    p.add_argument("--forecast", help="separate demand model used only for forecasts")
    p.add_argument("--stocks", help="initial stocks document")
    if fleet:
        p.add_argument("--fleet", help="fleet document (overrides --counts)")


def _run_args(p):
    p.add_argument("--scenarios", type=int, help="number of scenarios N")
    p.add_argument("--seed", type=int, help="master seed; scenario k uses seed + k")
    p.add_argument("--bin-minutes", type=int, help="width of the missed-request bins")
    p.add_argument("--out", required=True, help="output directory")


def build_parser():
    ap = argparse.ArgumentParser(prog="bikesim", description="Bike-sharing relocation simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check inputs and report every issue")
    _input_args(p)

    p = sub.add_parser("simulate", help="run one fleet over a batch of scenarios")
    _input_args(p)
    _run_args(p)
    p.add_argument("--counts", help="vehicles per config grid slot, e.g. 2,1")
    p.add_argument("--trace", action="store_true", help="write the epoch decision log of every scenario")

    p = sub.add_parser("grid", help="run a shift grid experiment")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="experiment config (JSON)")
    src.add_argument("--manifest", help="rerun from a manifest written by an earlier grid")
    _run_args(p)
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--max-total", type=int, help="largest total vehicle count of a cell")
    p.add_argument("--full", action="store_true", help="run the full rectangle, ignoring the total limit")

    p = sub.add_parser("sample-scenarios", help="export sampled scenarios as CSV")
    _input_args(p, fleet=False)
    _run_args(p)
    return ap


def _config(args):
    """Experiment config from ``--config`` plus explicit input flags."""
    if getattr(args, "config", None):
        base = Path(args.config).parent
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config}: {e.strerror}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {args.config} is not valid JSON: {e}") from e
    else:
        base, doc = Path("."), {}
    if getattr(args, "instance", None):
        for k in ("layout", "demand", "stocks"):
            doc[k] = f"bundled:{args.instance}"
    for k in ("layout", "demand", "forecast", "stocks"):
        v = getattr(args, k, None)
        if v:
            doc[k] = str(Path(v).resolve())
    for k, attr in (("scenarios", "scenarios"), ("seed", "seed"), ("bin_minutes", "bin_minutes")):
        v = getattr(args, attr, None)
        if v is not None:
            doc[k] = v
    return config_from_dict(doc, base=base)


def _fleet(args, cfg):
    if getattr(args, "fleet", None):
        try:
            return fleet_from_dict(json.loads(Path(args.fleet).read_text()))
        except OSError as e:
            raise ConfigError(f"cannot read fleet {args.fleet}: {e.strerror}") from e
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ConfigError(f"fleet {args.fleet} is malformed: {e}") from e
    if getattr(args, "counts", None):
        counts = tuple(int(x) for x in args.counts.split(","))
        if len(counts) != len(cfg.slots):
            raise ConfigError(f"--counts needs {len(cfg.slots)} values, one per grid slot")
        return cfg.fleet(counts)
    return fleet_from_dict({"vehicles": []})


def cmd_validate(args):
    cfg = _config(args)
    fleet = _fleet(args, cfg)
    # layout and fleet issues are listed in full before the other documents are checked
    try:
        layout = layout_from_dict(cfg.docs["layout"])
    except (KeyError, TypeError) as e:
        raise ConfigError(f"malformed layout document: missing or bad field {e}") from e
    issues = setting_issues(layout, fleet)
    for iss in issues:
        print(f"{iss.code}: {iss.message}")
    if issues:
        return EXIT_INVALID
    inputs = cfg.inputs()
    print(f"ok: {inputs.layout.n} stations, {len(fleet)} vehicles, horizon {inputs.layout.horizon} s")
    return EXIT_OK


def cmd_simulate(args):
    cfg = _config(args)
    inputs = cfg.inputs()
    fleet = _fleet(args, cfg)
    validate_setting(inputs.layout, fleet)
    out = Path(args.out)
    traces = {}

    def record(idx, rep, policy):
        if args.trace and policy is not None:
            traces[rep.seed] = "".join(d.log_line() + "\n" for d in policy.trace)

    batch = run_batch(cfg, fleet, record=record)
    emit_batch(cfg, batch, out, fleet=fleet_to_dict(fleet))
    for seed, text in sorted(traces.items()):
        path = out / "trace" / f"epochs_{seed}.log"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    s = batch.summary()
    print(
        f"{batch.n} scenarios: empty {s['empty_hours']['mean']:.2f} h, full {s['full_hours']['mean']:.2f} h, "
        f"total {s['total_hours']['mean']:.2f} h, missed rentals {s['missed_rentals']['mean']:.2f}, "
        f"missed returns {s['missed_returns']['mean']:.2f}"
    )
    return EXIT_OK


def cmd_grid(args):
    cfg = load_manifest(args.manifest) if args.manifest else load_config(args.config)
    if args.scenarios is not None:
        cfg.scenarios = args.scenarios
    if args.seed is not None:
        cfg.seed = args.seed
    if args.bin_minutes is not None:
        cfg.bin_minutes = args.bin_minutes
    if args.max_total is not None:
        cfg.max_total = args.max_total
    if args.full:
        cfg.full_grid = True
    cfg = config_from_dict(cfg.to_dict())  # re-validate after overrides
    report = run_grid(cfg, workers=args.workers)
    emit_reports(report, args.out)
    print(f"{len(report.cells)} cells x {cfg.scenarios} scenarios written to {args.out}")
    return EXIT_OK


def cmd_sample(args):
    cfg = _config(args)
    inputs = cfg.inputs()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in cfg.seeds:
        sc = sample_scenario(inputs.demand, seed)
        (out / f"scenario_{seed}.csv").write_text(sc.to_csv())
    print(f"{len(cfg.seeds)} scenarios written to {out}")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "simulate": cmd_simulate, "grid": cmd_grid, "sample-scenarios": cmd_sample}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        for iss in e.issues:
            print(f"{iss.code}: {iss.message}", file=sys.stderr)
        return EXIT_INVALID
    except ConfigError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except BatchError as e:
        print(f"simulation failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - last-resort runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
