"""Command-line front end: ``photonoc <command> [options]``.

Commands
--------
thermal    one thermal solve, thermal-map CSV and per-ONI statistics
snr        thermal solve plus SNR report for every ring-length variant
sweep      P_heater / I_VCSEL / P_VCSEL / P_chip sweep
optimize   heater power minimising the worst ONI gradient
scenarios  activity scenarios against ring-length variants

Exit status is 0 on success, 2 when the simulation ran but a design
constraint (gradient, SNR, sensitivity) is violated, and 1 on any error.
``PHOTONOC_LOG`` (DEBUG, INFO, WARNING, ...) sets the log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import re
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .chipmodel import ConfigError, bundled_config_path, load_config
from .explore import (
    SWEEP_VARIABLES,
    ExplorationResult,
    HeaterOptimum,
    Knobs,
    Limits,
    Photonics,
    Sample,
    ScenarioRow,
    ScenarioSpec,
    SweepSpec,
    System,
    default_scenarios,
    evaluate_scenarios,
    optimize_heater,
    parse_power,
    ring_variants,
    summary,
    sweep,
    write_channel_csv,
    write_result_csv,
    write_scenarios_csv,
    write_summary_json,
)
from .photonics import VcselModel
from .snr import write_ledger_csv, write_snr_csv
from .thermal import ThermalSolveError, write_csv

log = logging.getLogger("photonoc")

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for design violations
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# argument parsing


_CURRENT_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(mA|A)?\s*$")


def parse_current(text: str) -> float:
    """Current in mA from ``"2.4"``, ``"2.4mA"`` or ``"0.0024A"``."""
    m = _CURRENT_RE.match(text)
    if not m:
        raise ValueError(f"cannot read current {text!r}; use e.g. '2.4' or '2.4mA'")
    value = float(m.group(1))
    return value * 1000.0 if m.group(2) == "A" else value


def _power_arg(text: str) -> float:
    try:
        return parse_power(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _current_arg(text: str) -> float:
    try:
        return parse_current(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="system description (TOML); default: bundled SCC-like chip")
    common.add_argument("--activity", default=None,
                        help="uniform:12.5W | diagonal:4W,8W | random:25W | zero, or a TOML file "
                             "with an [activity] table; default: the config's [activity]")
    common.add_argument("--pvcsel", type=_power_arg, default=None, help="laser power per VCSEL (mW, or W suffix)")
    common.add_argument("--pheater", type=_power_arg, default=None, help="heater power per MR (mW)")
    common.add_argument("--pdriver", type=_power_arg, default=None, help="driver power per VCSEL (mW)")
    common.add_argument("--ivcsel", type=_current_arg, default=None, help="laser current (mA)")
    common.add_argument("--vcsel-table", type=Path, default=None,
                        help="CSV efficiency table with rows T_C,I_mA,eta")
    common.add_argument("--seed", type=int, default=None, help="seed of the random activity pattern")
    common.add_argument("--jobs", type=int, default=1, help="parallel evaluations (default 1)")
    common.add_argument("--out", type=Path, default=Path("photonoc-out"), help="output directory")
    common.add_argument("--tolerance", type=float, default=1e-8, help="thermal solver tolerance")
    common.add_argument("--max-gradient", type=float, default=1.0, help="per-ONI gradient limit (°C)")
    common.add_argument("--min-snr", type=float, default=10.0, help="SNR limit (dB)")

    parser = _Parser(prog="photonoc", description="Thermal-aware design of VCSEL-based ring optical NoCs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("thermal", parents=[common], help="thermal map and per-ONI statistics")
    p.add_argument("--variant", default=None, help="ring variant from [ring.variants]; default: [oni].pitch")

    p = sub.add_parser("snr", parents=[common], help="SNR report per ring-length variant")
    p.add_argument("--variant", action="append", default=None, help="restrict to a variant (repeatable)")
    p.add_argument("--ledger", action="store_true", help="also write per-event power ledgers")

    p = sub.add_parser("sweep", parents=[common], help="sweep one knob")
    p.add_argument("--variable", choices=SWEEP_VARIABLES, default="P_heater")
    p.add_argument("--range", nargs=3, metavar=("MIN", "MAX", "STEPS"), required=True,
                   help="MIN and MAX in mW (W suffix allowed) or mA for I_VCSEL")
    p.add_argument("--variant", default=None)
    p.add_argument("--no-snr", action="store_true", help="thermal quantities only")

    p = sub.add_parser("optimize", parents=[common], help="heater power minimising the worst gradient")
    p.add_argument("--budget", type=int, default=12, help="gradient evaluations (>= 3)")
    p.add_argument("--variant", default=None)

    p = sub.add_parser("scenarios", parents=[common], help="activity scenarios per ring variant")
    p.add_argument("--scenario", action="append", default=None,
                   help="activity to compare (repeatable); default: uniform, diagonal, random at the config total")
    return parser


# ---------------------------------------------------------------------------
# shared set-up


def _echo(message: str) -> None:
    print(f"note: {message}")


def _load(args) -> dict:
    path = args.config or bundled_config_path()
    return load_config(path)


def _scenario(args, config) -> ScenarioSpec:
    seed = args.seed
    if args.activity is None:
        spec = ScenarioSpec.from_config(config)
    elif Path(args.activity).suffix == ".toml" or Path(args.activity).is_file():
        spec = ScenarioSpec.from_config(load_config(args.activity))
    else:
        try:
            spec = ScenarioSpec.parse(args.activity, seed=spec_seed(config) if seed is None else seed)
        except ValueError as exc:
            raise UsageError(f"--activity: {exc}") from None
    if seed is not None and spec.seed != seed:
        _echo(f"activity seed {spec.seed} replaced by --seed {seed}")
        spec = replace(spec, seed=seed)
    return spec


def spec_seed(config) -> int:
    return int(config.get("activity", {}).get("seed", 0))


def _photonics(args, config) -> Photonics:
    ph = Photonics.from_config(config)
    if args.vcsel_table is not None:
        try:
            table = VcselModel.from_csv(args.vcsel_table)
        except OSError as exc:
            raise UsageError(f"--vcsel-table: {exc}") from None
        vcsel = replace(table, coupling_efficiency=ph.vcsel.coupling_efficiency,
                        forward_voltage=ph.vcsel.forward_voltage)
        ph = replace(ph, vcsel=vcsel)
    return ph


def _knobs(args, system: System) -> Knobs:
    knobs = Knobs(p_vcsel=args.pvcsel, p_heater=args.pheater, p_driver=args.pdriver, i_vcsel=args.ivcsel)
    current, p_elec, p_vcsel, p_driver = system.resolve(knobs)
    if args.ivcsel is not None:
        _echo(f"I_VCSEL = {current:g} mA gives P_elec = {p_elec:g} mW")
        if args.pvcsel is None:
            _echo(f"P_VCSEL taken as P_elec = {p_vcsel:g} mW")
    elif args.pvcsel is not None:
        _echo(f"I_VCSEL = P_VCSEL / V_f = {current:g} mA")
    if args.pdriver is None and (args.pvcsel is not None or args.ivcsel is not None):
        _echo(f"P_driver follows P_VCSEL = {p_driver:g} mW")
    return knobs


def _limits(args) -> Limits:
    return Limits(gradient=args.max_gradient, snr_db=args.min_snr)


def _pitch(config, variant: str | None) -> float | None:
    if variant is None:
        return None
    variants = ring_variants(config)
    if variant not in variants:
        raise UsageError(f"unknown ring variant {variant!r}; known: {', '.join(variants)}")
    return variants[variant]


def _system(args, config, variant: str | None = None, scenario: ScenarioSpec | None = None) -> System:
    return System(
        config,
        pitch=_pitch(config, variant),
        scenario=scenario or _scenario(args, config),
        tolerance=args.tolerance,
        limits=_limits(args),
        photonics=_photonics(args, config),
    )


def _fmt_snr(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.2f} dB"


def _flag_text(flags: dict) -> str:
    return " ".join(f"{k.removesuffix('_ok')}={'ok' if v else 'FAIL'}" for k, v in flags.items())


def _write_oni_csv(sample: Sample, path: Path) -> None:
    lines = ["oni,avg_T_C,gradient_C,vcsel_T_C,mr_T_C,flagged,eta,op_net_mW"]
    for s, op in zip(sample.oni, sample.lasers):
        lines.append(",".join([
            str(s.oni_id), f"{s.avg_temperature:.6f}", f"{s.gradient:.6f}", f"{s.vcsel_temperature:.6f}",
            f"{s.mr_temperature:.6f}", str(int(s.flagged)), f"{op.efficiency:.6f}", f"{op.network_power:.9e}",
        ]))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# plot data


def _dat_value(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NaN"
    return f"{v:.10g}"


def export_plot_data(result, path: str | Path) -> list[Path]:
    """Gnuplot-ready whitespace-separated files with commented headers.

    ``result`` is an :class:`ExplorationResult` (knob against gradient,
    worst SNR and mean temperature), a :class:`HeaterOptimum` (evaluated
    heater powers against gradient) or a list of :class:`ScenarioRow` (one
    row per scenario, spread and worst SNR columns grouped per ring
    variant).  Nothing is written for an empty result.
    """
    path = Path(path)
    if isinstance(result, ExplorationResult):
        if not result.samples:
            raise ValueError("empty sweep result: nothing to export")
        unit = "mA" if result.variable == "I_VCSEL" else "mW"
        lines = [f"# {result.variable}_{unit} max_gradient_C worst_snr_dB mean_temperature_C"]
        for s in result.samples:
            lines.append(" ".join(_dat_value(v) for v in (s.knob, s.max_gradient, s.worst_snr, s.mean_temperature)))
    elif isinstance(result, HeaterOptimum):
        if not result.evaluations:
            raise ValueError("empty optimisation result: nothing to export")
        lines = [f"# P_heater_mW max_gradient_C   (optimum {result.p_heater:.6g} mW, {result.method})"]
        for x, g in sorted(result.evaluations):
            lines.append(f"{_dat_value(x)} {_dat_value(g)}")
    else:
        rows: Sequence[ScenarioRow] = list(result)
        if not rows:
            raise ValueError("empty scenario comparison: nothing to export")
        variants = list(dict.fromkeys(r.variant for r in rows))
        scenarios = list(dict.fromkeys(r.scenario for r in rows))
        table = {(r.scenario, r.variant): r for r in rows}
        head = ["scenario"]
        for v in variants:
            head += [f"spread_C[{v}]", f"worst_snr_dB[{v}]"]
        lines = ["# " + " ".join(head)]
        for sc in scenarios:
            vals = [sc]
            for v in variants:
                r = table.get((sc, v))
                vals += [_dat_value(r.spread if r else None), _dat_value(r.worst_snr if r else None)]
            lines.append(" ".join(vals))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return [path]


# ---------------------------------------------------------------------------
# commands


def cmd_thermal(args, config, out: Path) -> int:
    system = _system(args, config, args.variant)
    knobs = _knobs(args, system)
    tmap, _, _ = system.operate(knobs)
    sample = system.evaluate(knobs, with_snr=False)
    write_csv(tmap, out / "thermal_map.csv")
    _write_oni_csv(sample, out / "oni.csv")
    print(f"thermal: {tmap.mesh.n_cells} cells, max T {tmap.max_temperature:.3f} °C, "
          f"ONI mean {sample.mean_temperature:.3f} °C, worst gradient {sample.max_gradient:.3f} °C, "
          f"{_flag_text(sample.flags)}")
    return EXIT_OK if all(sample.flags.values()) else EXIT_VIOLATION


def cmd_snr(args, config, out: Path) -> int:
    variants = ring_variants(config)
    names = args.variant or list(variants)
    for n in names:
        _pitch(config, n)
    scenario = _scenario(args, config)
    systems = {name: _system(args, config, name, scenario) for name in names}
    knobs = _knobs(args, systems[names[0]])
    ok = True
    worst_grad, worst_snr = -math.inf, math.inf
    for name, system in systems.items():
        sample = system.evaluate(knobs)
        write_snr_csv(sample.report, out / f"snr_{name}.csv", sample.channel_labels)
        _write_oni_csv(sample, out / f"oni_{name}.csv")
        if args.ledger:
            write_ledger_csv(sample.report.ledgers, out / f"ledger_{name}.csv")
        worst_grad = max(worst_grad, sample.max_gradient)
        if sample.worst_snr is not None:
            worst_snr = min(worst_snr, sample.worst_snr)
        ok &= all(sample.flags.values())
        print(f"  {name}: ring {system.ring_length_mm():.1f} mm, worst SNR {_fmt_snr(sample.worst_snr)}, "
              f"min signal {sample.min_signal:.4g} mW, worst gradient {sample.max_gradient:.3f} °C, "
              f"{_flag_text(sample.flags)}")
    print(f"snr: worst gradient {worst_grad:.3f} °C, worst SNR "
          f"{_fmt_snr(None if worst_snr == math.inf else worst_snr)}, {'ok' if ok else 'constraints violated'}")
    return EXIT_OK if ok else EXIT_VIOLATION


def _range_values(args) -> tuple[float, float, int]:
    lo, hi, steps = args.range
    conv = parse_current if args.variable == "I_VCSEL" else parse_power
    try:
        return conv(lo), conv(hi), int(steps)
    except ValueError as exc:
        raise UsageError(f"--range: {exc}") from None


def cmd_sweep(args, config, out: Path) -> int:
    system = _system(args, config, args.variant)
    lo, hi, steps = _range_values(args)
    fixed = _knobs(args, system)
    try:
        spec = SweepSpec(args.variable, lo, hi, steps, fixed)
    except ValueError as exc:
        raise UsageError(f"--range: {exc}") from None
    result = sweep(spec, system, jobs=args.jobs, with_snr=not args.no_snr)
    write_result_csv(result, out / "sweep.csv")
    if not args.no_snr:
        write_channel_csv(result, out / "sweep_channels.csv")
    data = summary(result)
    write_summary_json(data, out / "summary.json")
    export_plot_data(result, out / "sweep.dat")
    best = data["argmin_gradient"]
    snr_best = data["argmax_worst_snr"]
    print(f"sweep {args.variable}: {len(result.samples)} samples, min worst gradient {best['max_gradient_C']:.3f} °C "
          f"at {best['knob']:g}, best worst SNR {_fmt_snr(snr_best and snr_best['worst_snr_dB'])}")
    return EXIT_OK if any(all(s.flags.values()) for s in result.samples) else EXIT_VIOLATION


def cmd_optimize(args, config, out: Path) -> int:
    system = _system(args, config, args.variant)
    fixed = _knobs(args, system)
    if args.pheater is not None:
        _echo("--pheater is ignored: the heater power is being optimised")
    _, _, p_vcsel, _ = system.resolve(fixed)
    opt = optimize_heater(system, p_vcsel, args.budget, fixed=replace(fixed, p_heater=None))
    if opt.note:
        _echo(opt.note)
    export_plot_data(opt, out / "optimize.dat")
    write_summary_json(
        {
            "p_vcsel_mW": p_vcsel,
            "p_heater_mW": opt.p_heater,
            "gradient_C": opt.gradient,
            "no_heater_gradient_C": opt.no_heater_gradient,
            "method": opt.method,
            "evaluations": [list(e) for e in opt.evaluations],
            "note": opt.note,
        },
        out / "optimize.json",
    )
    ok = opt.gradient <= args.max_gradient
    print(f"optimize: P_heater* = {opt.p_heater:.4g} mW ({opt.p_heater / p_vcsel if p_vcsel else 0:.3f} x P_VCSEL), "
          f"worst gradient {opt.gradient:.3f} °C (no heater {opt.no_heater_gradient:.3f} °C), "
          f"gradient={'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_scenarios(args, config, out: Path) -> int:
    seed = spec_seed(config) if args.seed is None else args.seed
    if args.scenario:
        try:
            specs = [ScenarioSpec.parse(s, seed=seed) for s in args.scenario]
        except ValueError as exc:
            raise UsageError(f"--scenario: {exc}") from None
    else:
        specs = [replace(s, seed=seed) if s.kind == "random" else s for s in default_scenarios(config)]
    if args.activity is not None:
        _echo("--activity is ignored by 'scenarios'; use --scenario")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise UsageError("each --scenario kind may appear once")
    photonics = _photonics(args, config)
    systems = {
        name: System(config, pitch=pitch, tolerance=args.tolerance, limits=_limits(args), photonics=photonics)
        for name, pitch in ring_variants(config).items()
    }
    knobs = _knobs(args, next(iter(systems.values())))
    rows = evaluate_scenarios(config, specs, knobs, systems=systems, jobs=args.jobs)
    write_scenarios_csv(rows, out / "scenarios.csv")
    export_plot_data(rows, out / "scenarios.dat")
    for r in rows:
        print(f"  {r.scenario:8s} {r.variant:8s} ONI {r.min_temperature:.2f}..{r.max_temperature:.2f} °C "
              f"(spread {r.spread:.2f}), worst SNR {_fmt_snr(r.worst_snr)}")
    worst = [r.worst_snr for r in rows if r.worst_snr is not None]
    grad = max(r.max_gradient for r in rows)
    ok = grad <= args.max_gradient and len(worst) == len(rows) and min(worst) >= args.min_snr
    print(f"scenarios: worst gradient {grad:.3f} °C, worst SNR {_fmt_snr(min(worst) if worst else None)}, "
          f"{'ok' if ok else 'constraints violated'}")
    return EXIT_OK if ok else EXIT_VIOLATION


COMMANDS = {
    "thermal": cmd_thermal,
    "snr": cmd_snr,
    "sweep": cmd_sweep,
    "optimize": cmd_optimize,
    "scenarios": cmd_scenarios,
}


def _configure_logging() -> None:
    level = os.environ.get("PHOTONOC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        config = _load(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, config, out)
    except ThermalSolveError as exc:
        print(f"photonoc: thermal solver failed after {exc.iterations} iterations "
              f"(relative residual {exc.residual:.3e}): {exc}", file=sys.stderr)
    except (ConfigError, UsageError) as exc:
        print(f"photonoc: error: {exc}", file=sys.stderr)
    except (ValueError, OSError, RuntimeError) as exc:
        log.debug("failure", exc_info=True)
        print(f"photonoc: error: {exc}", file=sys.stderr)
    return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
