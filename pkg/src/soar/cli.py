"""Command-line front end.

Subcommands ``solve``, ``bench``, ``trace`` and ``filters`` read an INI
config (a path, or the name of a shipped preset such as ``example1.cfg``).
Keys in ``[common]`` apply to every subcommand and are overridden by the
subcommand's own section, then by ``--override key=value`` flags.
"""

import argparse
import configparser
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import bench
from .errors import ConfigError, SoarError
from .filters import DampingConfig, write_filter_curve
from .problems import add_noise, build_integral_problem, l2_relative_error
from .solvers import SolverConfig, run, write_trajectory
from .stopping import StoppingRule

log = logging.getLogger("soar")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

TRACE_KEYS = {
    "etas": ("floats", (2.5648e-4, 2.5648e-3), "damping values, one trace each (1/time)"),
    "steps": ("int", 2000, "steps per trace"),
}
FILTER_KEYS = {
    "eta": ("float", 4.0, "damping parameter (1/time)"),
    "norm": ("float", 1.0, "operator norm ||A||"),
    "alphas": ("floats", (1e-3, 1e-2, 1e-1), "regularization parameters alpha = 1/t"),
    "lambdas": ("int", 64, "number of log-spaced spectral points in [1e-8, 1] ||A||^2"),
}
SECTION_KEYS = {
    "solve": bench.SPEC_KEYS,
    "bench": bench.SPEC_KEYS,
    "trace": {**bench.SPEC_KEYS, **TRACE_KEYS},
    "filters": FILTER_KEYS,
}
SECTIONS = ("common",) + tuple(SECTION_KEYS)


def _key_help(keys):
    lines = ["config keys (default; meaning):"]
    for name, (kind, default, text) in keys.items():
        shown = "empty" if default is None else bench._format_value(kind, default)
        lines.append(f"  {name} = {shown}; {text}")
    return "\n".join(lines)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="soar",
        description="Second-order asymptotical regularization: solvers, experiments, filters.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v: one line per run, -vv: debug logging")
    sub = parser.add_subparsers(dest="command")
    helps = {
        "solve": "run one solver on a test problem",
        "bench": "run an experiment matrix and write records.csv",
        "trace": "emit discrepancy traces chi(t) for several damping values",
        "filters": "write spectral filter curves to filters.csv",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text, epilog=_key_help(SECTION_KEYS[name]),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="INI config path or preset name (example1.cfg, example2.cfg)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--output-dir", default=".", help="directory for output files (default .)")
        p.add_argument("-v", "--verbose", action="count", default=0, dest="sub_verbose")
        if name != "filters":
            p.add_argument("--seed", type=int, help="noise seed (default 0)")
            p.add_argument("--max-iter", type=int, help="iteration cap per run")
            p.add_argument("--table-mode", action="store_true",
                           help="energy rule threshold 1.1 delta^(4p/(4p+1)) times delta")
        if name == "bench":
            p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
        if name == "filters":
            p.add_argument("--eta", type=float, help="damping parameter")
            p.add_argument("--norm", type=float, help="operator norm ||A||")
            p.add_argument("--alphas", help="comma list of alpha values")
            p.add_argument("--lambdas", type=int, help="number of spectral points")
    return parser


def _resolve_config(path):
    p = Path(path)
    if p.exists():
        return p.read_text(), str(p)
    preset = resources.files("soar") / "presets" / p.name
    if preset.is_file():
        return preset.read_text(), f"preset {p.name}"
    name = p.name if p.suffix else p.name + ".cfg"
    preset = resources.files("soar") / "presets" / name
    if preset.is_file():
        return preset.read_text(), f"preset {name}"
    raise ConfigError(f"config file not found: {path}")


def load_config(path, command="solve"):
    """Merged ``key -> text`` mapping for ``command`` from an INI file.

    Raises
    ------
    ConfigError
        Missing file, parse error (with line number), unknown section or
        unknown key.
    """
    if path is None:
        return {}
    text, origin = _resolve_config(path)
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{origin}: unknown section [{section}]")
    allowed = SECTION_KEYS[command]
    merged = {}
    for section in ("common", command):
        if not cp.has_section(section):
            continue
        for key, value in cp[section].items():
            if section == "common" and key not in allowed:
                # common keys may target other subcommands
                if not any(key in keys for keys in SECTION_KEYS.values()):
                    raise ConfigError(f"{origin}: unknown key {key!r} in [common]")
                continue
            if key not in allowed:
                raise ConfigError(f"{origin}: unknown key {key!r} in [{section}]")
            merged[key] = value
    return merged


def _apply_overrides(mapping, overrides, allowed):
    out = dict(mapping)
    for item in overrides:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = value
    return out


def _split(mapping, keys):
    return {k: v for k, v in mapping.items() if k in keys}


def _spec(args, mapping):
    spec = bench.spec_from_mapping(_split(mapping, bench.SPEC_KEYS))
    if args.seed is not None:
        spec = replace(spec, seeds=(args.seed,))
    if args.max_iter is not None:
        spec = replace(spec, max_iter=args.max_iter)
    if args.table_mode:
        spec = replace(spec, table_mode=True)
    return spec


def _print_record(rec):
    print(f"{rec.method} {rec.rule} delta'={rec.delta_prime:g} seed={rec.seed}: "
          f"status={rec.status} k*={rec.k_star} l2err={_fmt(rec.l2err)}")


def _fmt(v):
    return "-" if v is None else f"{v:.4g}"


def cmd_bench(args, mapping, out):
    spec = _spec(args, mapping)
    records = bench.run_matrix(spec, workers=args.workers,
                               progress=_print_record if args.verbose else None)
    bench.write_records(out / "records.csv", records)
    bench.write_manifest(out / "manifest.txt", spec)
    failed = [r for r in records if r.status == bench.RunStatus.CONFIG_ERROR]
    for r in failed:
        print(f"error[config]: {r.method}/{r.rule}: {r.message}", file=sys.stderr)
    return EXIT_CONFIG if failed else EXIT_OK


def cmd_solve(args, mapping, out):
    spec = _spec(args, mapping)
    problem = build_integral_problem(spec.n, spec.problem)
    method, rule_kind = spec.methods[0], spec.rules[0]
    data = add_noise(problem, spec.delta_primes[0], spec.seeds[0])
    cfg = SolverConfig(method=method, dt=spec.dt, eta=spec.eta, x0=spec.x0, v0=spec.v0,
                       nesterov_alpha=spec.nesterov_alpha, max_iter=spec.max_iter,
                       allow_unstable_step=spec.allow_unstable_step)
    p = spec.p if spec.p is not None else problem.p_smoothness
    rule = StoppingRule(kind=rule_kind, tau=spec.tau, delta=data.delta, t_star=spec.t_star,
                        table_mode=spec.table_mode and rule_kind == "tedp", p=p)
    state, decision, traj = run(problem.op, data.y_delta, cfg, rule)
    err = l2_relative_error(state.x, problem)
    write_trajectory(out / "trajectory.csv", traj)
    np.savetxt(out / "solution.csv", np.column_stack([problem.nodes, state.x]),
               delimiter=",", header="s,x", comments="", fmt="%.17g")
    bench.write_manifest(out / "manifest.txt", spec)
    print(f"{method} {rule_kind}: delta={data.delta:.6g} k*={decision.k_star} "
          f"reason={decision.reason.value} l2err={err:.6g}")
    return EXIT_OK


def cmd_trace(args, mapping, out):
    spec = _spec(args, mapping)
    extra = {k: bench.parse_value(k, v, TRACE_KEYS) for k, v in _split(mapping, TRACE_KEYS).items()}
    etas = extra.get("etas", TRACE_KEYS["etas"][1])
    steps = extra.get("steps", TRACE_KEYS["steps"][1])
    problem = build_integral_problem(spec.n, spec.problem)
    cfg = SolverConfig(method="soar_sv", dt=spec.dt, eta=max(etas), x0=spec.x0, v0=spec.v0,
                       allow_unstable_step=spec.allow_unstable_step)
    res = bench.discrepancy_trace(problem, cfg, spec.delta_primes[0], spec.seeds[0], etas,
                                  tau=spec.tau, steps=steps, output_dir=out / "trace")
    for (lo, hi), frac in res.ordering_fraction.items():
        print(f"eta {lo:g} vs {hi:g}: larger damping has smaller chi at {100 * frac:.1f}% of samples")
    print(f"ordering {'holds' if res.ordered else 'violated'}")
    return EXIT_OK


def cmd_filters(args, mapping, out):
    vals = {k: bench.parse_value(k, v, FILTER_KEYS) for k, v in mapping.items()}
    for key in ("eta", "norm", "lambdas"):
        flag = getattr(args, key)
        if flag is not None:
            vals[key] = flag
    if args.alphas is not None:
        vals["alphas"] = bench.parse_value("alphas", args.alphas, FILTER_KEYS)
    eta = vals.get("eta", FILTER_KEYS["eta"][1])
    norm = vals.get("norm", FILTER_KEYS["norm"][1])
    alphas = vals.get("alphas", FILTER_KEYS["alphas"][1])
    count = vals.get("lambdas", FILTER_KEYS["lambdas"][1])
    if count < 1:
        raise ConfigError(f"lambdas must be >= 1, got {count}")
    cfg = DampingConfig(eta=eta, operator_norm_sq=norm**2)
    lams = norm**2 * np.logspace(-8, 0, count)
    rows = write_filter_curve(out / "filters.csv", cfg, alphas, lams)
    print(f"wrote {rows} rows to {out / 'filters.csv'}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "bench": cmd_bench, "trace": cmd_trace, "filters": cmd_filters}


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_help()
        return EXIT_OK
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_OK
    args.verbose = args.verbose + args.sub_verbose
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else
                        logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        mapping = load_config(args.config, args.command)
        mapping = _apply_overrides(mapping, args.override, SECTION_KEYS[args.command])
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, mapping, out)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SoarError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
