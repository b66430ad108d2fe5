"""``multirat`` command line: plan, simulate, sweep, calibrate.

Exit codes: 0 success, 1 usage error, 2 no feasible plan, 3 schema error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .calibration import DEFAULT_FREE_STATES, calibrate, read_samples
from .errors import ConfigError, NoFeasiblePlan, SchemaError
from .link import LinkState
from .nbiot import ModemState
from .policy import MessageRequest, NodeState, PolicyOptions, enumerate_candidates, select_plan
from .profile import data_path, default_profile, dumps, load, prior_profile
from .simulator import MODES, load_scenario, run
from .sweep import sweep_energy_per_byte

EXIT_OK, EXIT_USAGE, EXIT_NO_PLAN, EXIT_SCHEMA = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _profile(args):
    return load(args.profile) if args.profile else default_profile()


def _write(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_plan(args) -> int:
    profile = _profile(args)
    if args.path_loss is not None:
        path_loss = args.path_loss
    elif args.rsrp is not None:
        path_loss = LinkState.from_rsrp(args.rsrp).path_loss_db
    else:
        raise UsageError("plan: one of --rsrp or --path-loss is required")
    link = LinkState(path_loss, lora_path_loss_db=args.lora_path_loss, lora_snr_margin_db=args.snr_margin)
    msg = MessageRequest("cli", args.payload, args.deadline, args.qos)
    state = NodeState(link=link, ledger=profile.ledger(), modem_state=ModemState(args.modem_state))
    options = PolicyOptions(confirmed_uplink=args.confirmed, latency_quantile=args.latency_quantile)
    candidates = enumerate_candidates(msg, state, profile, options)
    try:
        chosen = select_plan(candidates)
    except NoFeasiblePlan as exc:
        out = {"selected": None, "candidates": [c.to_dict() for c in exc.candidates]}
        print(json.dumps(out, indent=2, default=_json_default))
        print("technology=none (no feasible plan)", file=sys.stderr)
        return EXIT_NO_PLAN
    out = {"selected": chosen.to_dict(), "candidates": [c.to_dict() for c in candidates]}
    print(f"technology={chosen.technology} parameter={chosen.parameter}")
    print(json.dumps(out, indent=2, default=_json_default))
    return EXIT_OK


def _json_default(x):
    if x == float("inf"):
        return None
    raise TypeError(type(x))


def _run_mode(job):
    path, profile_path, mode, seed = job
    profile = load(profile_path) if profile_path else None
    scenario = load_scenario(path, profile=profile)
    return run(scenario.with_mode(mode), seed)


def cmd_simulate(args) -> int:
    profile = load(args.profile) if args.profile else None
    scenario = load_scenario(args.scenario, profile=profile)
    if args.mode:
        scenario = scenario.with_mode(args.mode)
    if not args.compare:
        report = run(scenario, args.seed)
        _write(args.report, report.to_json())
        if args.trace:
            _write(args.trace, report.trace_csv())
        return EXIT_OK

    jobs = [(args.scenario, args.profile, m, args.seed) for m in MODES]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = dict(zip(MODES, pool.map(_run_mode, jobs)))
    else:
        reports = {m: run(scenario.with_mode(m), args.seed) for m in MODES}
    base = reports["multirat"]["weekly_transmit_energy_j"]
    summary = {
        "weekly_transmit_energy_j": {m: r["weekly_transmit_energy_j"] for m, r in reports.items()},
        "ratios": {
            f"{m}_over_multirat": (reports[m]["weekly_transmit_energy_j"] / base if base > 0 else None)
            for m in ("nbiot_only", "lora_only")
        },
        "reports": {m: r.data for m, r in reports.items()},
    }
    _write(args.report, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.trace:
        _write(args.trace, reports["multirat"].trace_csv())
    return EXIT_OK


def cmd_sweep(args) -> int:
    profile = _profile(args)
    if not 1 <= args.min <= args.max:
        raise UsageError("sweep: need 1 <= --min <= --max")
    if args.step < 1:
        raise UsageError("sweep: --step must be >= 1")
    table = sweep_energy_per_byte(profile, args.min, args.max, args.step)
    _write(args.output, table.to_csv())
    cross = table.crossover_bytes
    print(f"crossover lora_sf12/nbiot_ce2: {cross if cross is not None else 'none'} B", file=sys.stderr)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    prior = load(args.prior) if args.prior else prior_profile()
    samples = read_samples(args.samples or data_path("nbiot_energy_samples.csv"))
    result = calibrate(prior, samples, free_states=args.free, crossover_target_bytes=args.crossover_target)
    _write(args.output, dumps(result.profile))
    for level, res in result.nbiot.residuals.items():
        print(
            f"{level.name}: n={res.count} measured mean={res.mean_measured_j:.3f} J "
            f"predicted mean={res.mean_predicted_j:.3f} J rms={res.rms_residual_j:.3f} J "
            f"band=[{res.measured_min_j:.2f}, {res.measured_max_j:.2f}]",
            file=sys.stderr,
        )
    print(f"fitted powers (W): {result.nbiot.powers}", file=sys.stderr)
    print(f"LoRa power scale: {result.lora_scale:.6g}; crossover: {result.crossover_bytes} B", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="multirat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pl = sub.add_parser("plan", help="choose a technology for one message")
    pl.add_argument("--profile")
    pl.add_argument("--payload", type=int, required=True)
    pl.add_argument("--rsrp", type=float)
    pl.add_argument("--path-loss", type=float)
    pl.add_argument("--lora-path-loss", type=float)
    pl.add_argument("--snr-margin", type=float, help="LoRa margin (dB) over the SF12 floor")
    pl.add_argument("--deadline", type=float)
    pl.add_argument("--qos", choices=["best_effort", "assured"], default="best_effort")
    pl.add_argument("--modem-state", choices=[s.value for s in ModemState], default="psm")
    pl.add_argument("--confirmed", action="store_true", help="use confirmed LoRaWAN uplinks")
    pl.add_argument("--latency-quantile", type=float)
    pl.set_defaults(func=cmd_plan)

    sm = sub.add_parser("simulate", help="run a scenario")
    sm.add_argument("scenario")
    sm.add_argument("--profile")
    sm.add_argument("--mode", choices=list(MODES))
    sm.add_argument("--seed", type=int)
    sm.add_argument("--compare", action="store_true", help="run every mode and report energy ratios")
    sm.add_argument("--jobs", type=int, default=1, help="parallel runs for --compare")
    sm.add_argument("--report", help="report JSON path (default stdout)")
    sm.add_argument("--trace", help="per-message CSV trace path")
    sm.set_defaults(func=cmd_simulate)

    sw = sub.add_parser("sweep", help="energy per byte over a payload range")
    sw.add_argument("--profile")
    sw.add_argument("--min", type=int, default=1)
    sw.add_argument("--max", type=int, default=1600)
    sw.add_argument("--step", type=int, default=1)
    sw.add_argument("--output", help="CSV path (default stdout)")
    sw.set_defaults(func=cmd_sweep)

    cb = sub.add_parser("calibrate", help="fit profile constants to measured samples")
    cb.add_argument("--samples", help="CSV of rsrp_dbm, payload_bytes, measured_energy_j[, ce_level]")
    cb.add_argument("--prior", help="initial profile (default: packaged priors)")
    cb.add_argument("--free", nargs="+", default=list(DEFAULT_FREE_STATES), help="NB-IoT states whose power is fitted")
    cb.add_argument("--crossover-target", type=int, default=240)
    cb.add_argument("--output", help="fitted profile path (default stdout)")
    cb.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except NoFeasiblePlan as exc:
        print(exc, file=sys.stderr)
        return EXIT_NO_PLAN
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
