"""Experiment matrices over problems, methods, stopping rules and noise.

An :class:`ExperimentSpec` describes a cross product of runs; every run
yields one :class:`ExperimentRecord`, including failed runs, so a sweep
is never silently shortened.
"""

import configparser
import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from functools import lru_cache
from itertools import product
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import BreakdownError, ConfigError, DivergenceError, FitError
from .problems import add_noise, build_integral_problem, l2_relative_error
from .solvers import Method, SolverConfig, run
from .stopping import RuleKind, StoppingRule, StopReason

log = logging.getLogger(__name__)

DEFAULT_CAP = 10_000
ENERGY_SLACK = 1e-8


class RunStatus:
    OK = "ok"
    DIVERGED = "Diverged"
    MAX_ITER = "MaxIterExceeded"
    BREAKDOWN = "Breakdown"
    CONFIG_ERROR = "ConfigError"


# name -> (kind, default, help). kind is one of float, int, bool, str, floats, ints, strs
SPEC_KEYS = {
    "problem": ("str", "example1", "test problem: example1 or example2"),
    "n": ("int", 400, "number of grid nodes"),
    "methods": ("strs", ("soar_sv",),
                "comma list of soar_sv, soar_euler, landweber, nesterov, chebyshev, cgne"),
    "rules": ("strs", ("dp",), "comma list of dp, tedp, apriori, maxiter"),
    "delta_primes": ("floats", (1e-3,), "relative noise magnitudes delta'"),
    "seeds": ("ints", (0,), "noise seeds"),
    "dt": ("float", None, "step size (pseudo-time units); empty = method default"),
    "eta": ("float", 2.5648e-4, "damping parameter (1/time)"),
    "x0": ("float", 1.0, "initial iterate fill value"),
    "v0": ("float", 0.0, "initial velocity fill value"),
    "tau": ("float", 2.0, "discrepancy factor (> 1)"),
    "p": ("float", None, "smoothness exponent; empty = problem reference value"),
    "table_mode": ("bool", False, "energy rule uses tau = 1.1 delta^(4p/(4p+1))"),
    "t_star": ("float", None, "a-priori stopping time (pseudo-time units)"),
    "repetitions": ("int", 1, "repeats of every run (timing only)"),
    "max_iter": ("int", 100_000, "iteration cap per run"),
    "allow_unstable_step": ("bool", False, "accept dt above the stability bound"),
    "nesterov_alpha": ("float", 3.1, "Nesterov momentum parameter (> 3)"),
    "cap": ("int", DEFAULT_CAP, "maximum number of runs in one matrix"),
}


@dataclass(frozen=True)
class ExperimentSpec:
    problem: str = "example1"
    n: int = 400
    methods: tuple = ("soar_sv",)
    rules: tuple = ("dp",)
    delta_primes: tuple = (1e-3,)
    seeds: tuple = (0,)
    dt: Optional[float] = None
    eta: Optional[float] = 2.5648e-4
    x0: float = 1.0
    v0: float = 0.0
    tau: float = 2.0
    p: Optional[float] = None
    table_mode: bool = False
    t_star: Optional[float] = None
    repetitions: int = 1
    max_iter: int = 100_000
    allow_unstable_step: bool = False
    nesterov_alpha: float = 3.1
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        for name in ("methods", "rules", "delta_primes", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for m in self.methods:
            try:
                Method(m)
            except ValueError:
                raise ConfigError(f"unknown method {m!r}") from None
        for r in self.rules:
            try:
                RuleKind(r)
            except ValueError:
                raise ConfigError(f"unknown stopping rule {r!r}") from None
        if self.problem not in ("example1", "example2"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.n < 8:
            raise ConfigError(f"n must be >= 8, got {self.n}")
        if any(d < 0 for d in self.delta_primes):
            raise ConfigError("delta_primes must be nonnegative")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        if not self.tau > 1:
            raise ConfigError(f"tau must exceed 1, got {self.tau}")
        if "apriori" in self.rules and self.t_star is None:
            raise ConfigError("rule 'apriori' needs t_star")

    @property
    def size(self):
        return (len(self.methods) * len(self.rules) * len(self.delta_primes)
                * len(self.seeds) * self.repetitions)

    def runs(self):
        """Run coordinates in spec order."""
        return list(product(self.methods, self.rules, self.delta_primes, self.seeds,
                            range(self.repetitions)))


@dataclass
class ExperimentRecord:
    problem: str
    n: int
    method: str
    rule: str
    delta_prime: float
    seed: int
    repetition: int
    dt: Optional[float]
    eta: Optional[float]
    x0: float
    v0: float
    tau: float
    tau_effective: Optional[float]
    p: float
    table_mode: bool
    delta: Optional[float] = None
    delta_weighted: Optional[float] = None
    status: str = RunStatus.OK
    k_star: Optional[int] = None
    t_star: Optional[float] = None
    reason: Optional[str] = None
    chi_value: Optional[float] = None
    residual_check_held: Optional[bool] = None
    energy_monotone: Optional[bool] = None
    l2err: Optional[float] = None
    wall_time_seconds: Optional[float] = None
    message: str = ""

    def deterministic_part(self):
        d = asdict(self)
        d.pop("wall_time_seconds")
        return d


RECORD_COLUMNS = [f.name for f in fields(ExperimentRecord)]


@lru_cache(maxsize=8)
def _problem(label, n):
    return build_integral_problem(n, label)


def energy_monotone(trajectory, slack=ENERGY_SLACK):
    """``E_{k+1} <= E_k + slack * E_0`` along consecutive trajectory samples."""
    e = np.array([p.energy for p in trajectory])
    if e.size < 2:
        return True
    return bool(np.all(np.diff(e) <= slack * e[0]))


def run_one(spec, method, rule_kind, delta_prime, seed, repetition):
    """Execute one run; every failure mode is folded into the record."""
    problem = _problem(spec.problem, spec.n)
    p = spec.p if spec.p is not None else problem.p_smoothness
    data = add_noise(problem, delta_prime, seed)
    rec = ExperimentRecord(
        problem=spec.problem, n=spec.n, method=method, rule=rule_kind,
        delta_prime=delta_prime, seed=seed, repetition=repetition, dt=spec.dt,
        eta=spec.eta if Method(method).is_soar else None, x0=spec.x0, v0=spec.v0,
        tau=spec.tau, tau_effective=None, p=p, table_mode=spec.table_mode,
        delta=data.delta, delta_weighted=data.delta_weighted,
    )
    start = time.perf_counter()
    try:
        cfg = SolverConfig(
            method=method, dt=spec.dt, eta=spec.eta if Method(method).is_soar else None,
            nesterov_alpha=spec.nesterov_alpha, x0=spec.x0, v0=spec.v0,
            max_iter=spec.max_iter, allow_unstable_step=spec.allow_unstable_step,
        )
        cfg = cfg.validated(problem.op)
        rec.dt = cfg.dt
        rule = StoppingRule(kind=rule_kind, tau=spec.tau, delta=data.delta,
                            t_star=spec.t_star,
                            table_mode=spec.table_mode and rule_kind == "tedp", p=p)
        if rule.kind in (RuleKind.MOROZOV_DP, RuleKind.TOTAL_ENERGY_DP):
            rec.tau_effective = rule.tau_effective
        state, decision, traj = run(problem.op, data.y_delta, cfg, rule)
    except ConfigError as exc:
        rec.status, rec.message = RunStatus.CONFIG_ERROR, str(exc)
    except DivergenceError as exc:
        rec.status, rec.message, rec.k_star = RunStatus.DIVERGED, str(exc), exc.step
    except BreakdownError as exc:
        rec.status, rec.message, rec.k_star = RunStatus.BREAKDOWN, str(exc), exc.step
    else:
        rec.k_star = decision.k_star
        rec.t_star = decision.t_star
        rec.reason = decision.reason.value
        rec.chi_value = decision.chi_value
        rec.residual_check_held = decision.residual_check_held
        rec.energy_monotone = energy_monotone(traj)
        rec.l2err = l2_relative_error(state.x, problem)
        if decision.reason is StopReason.MAX_ITER_EXCEEDED:
            rec.status = RunStatus.MAX_ITER
    rec.wall_time_seconds = time.perf_counter() - start
    return rec


def _run_packed(args):
    return run_one(*args)


def run_matrix(spec, workers=1, progress=None):
    """Run every coordinate of ``spec``; records come back in spec order.

    Raises
    ------
    ConfigError
        If the matrix has more runs than ``spec.cap`` (checked before any run).
    """
    if spec.size > spec.cap:
        raise ConfigError(f"experiment matrix has {spec.size} runs, cap is {spec.cap}")
    jobs = [(spec, *coords) for coords in spec.runs()]
    if not jobs:
        return []
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = []
            for rec in pool.map(_run_packed, jobs):
                records.append(rec)
                if progress:
                    progress(rec)
        return records
    records = []
    for job in jobs:
        rec = _run_packed(job)
        records.append(rec)
        if progress:
            progress(rec)
    return records


# -- rate fits -------------------------------------------------------------------------

class RateFit(NamedTuple):
    slope: float
    r2: float
    used: int
    excluded: int


def _field(rec, name):
    return rec[name] if isinstance(rec, dict) else getattr(rec, name)


def fit_rate(records, x_field, y_field):
    """Least-squares slope of ``log y`` against ``log x``.

    Points with a nonpositive or missing coordinate are excluded and
    counted.

    Raises
    ------
    FitError
        If fewer than three points or fewer than three distinct ``x``
        values remain.
    """
    xs, ys, excluded = [], [], 0
    for rec in records:
        x, y = _field(rec, x_field), _field(rec, y_field)
        if x is None or y is None or not (x > 0 and y > 0) or not (
                math.isfinite(x) and math.isfinite(y)):
            excluded += 1
            continue
        xs.append(math.log(x))
        ys.append(math.log(y))
    if excluded:
        log.info("fit_rate: excluded %d record(s) with nonpositive values", excluded)
    if len(xs) < 3 or len(set(xs)) < 3:
        raise FitError(f"need >= 3 distinct positive x values, have {len(set(xs))} "
                       f"({excluded} excluded)")
    x = np.array(xs)
    y = np.array(ys)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), r2, len(xs), excluded)


# -- discrepancy traces ------------------------------------------------------------------

class DiscrepancyTraces(NamedTuple):
    traces: dict          # eta -> (t, chi)
    ordering_fraction: dict   # (eta_small, eta_large) -> fraction of samples ordered
    ordered: bool


def discrepancy_trace(problem, cfg, delta_prime, seed, eta_list, tau=2.0, steps=2000,
                      output_dir=None, min_fraction=0.8):
    """Residual discrepancy ``chi(t) = ||A x(t) - y_delta|| - tau delta`` per damping.

    Every trace runs ``steps`` steps with ``cfg`` (only ``eta`` varies).
    For each pair of consecutive damping values the fraction of samples
    beyond ``t = 10 dt`` where the more damped trace is not larger is
    reported; ``ordered`` holds when every pair reaches ``min_fraction``.
    """
    data = add_noise(problem, delta_prime, seed)
    rule = StoppingRule(RuleKind.MAX_ITER_ONLY, delta=data.delta)
    traces = {}
    for eta in eta_list:
        c = replace(cfg, eta=float(eta), max_iter=steps)
        _, _, traj = run(problem.op, data.y_delta, c, rule, thin_start=steps + 1)
        t = np.array([p.t for p in traj])
        chi = np.array([p.residual_norm for p in traj]) - tau * data.delta
        traces[float(eta)] = (t, chi)
    fractions = {}
    etas = sorted(traces)
    for lo, hi in zip(etas, etas[1:]):
        t, chi_lo = traces[lo]
        _, chi_hi = traces[hi]
        dt = c.validated(problem.op).dt
        mask = t > 10 * dt
        fractions[(lo, hi)] = float(np.mean(chi_hi[mask] <= chi_lo[mask])) if mask.any() else 1.0
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for eta, (t, chi) in traces.items():
            with open(out / f"trace_eta_{eta:.6g}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "chi"])
                w.writerows((repr(float(a)), repr(float(b))) for a, b in zip(t, chi))
    ordered = all(f >= min_fraction for f in fractions.values())
    return DiscrepancyTraces(traces, fractions, ordered)


# -- persistence -------------------------------------------------------------------------

def write_records(path, records):
    """CSV with header :data:`RECORD_COLUMNS`; empty cells for missing values."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS, quoting=csv.QUOTE_MINIMAL)
        w.writeheader()
        for rec in records:
            row = asdict(rec)
            w.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v)
                        for k, v in row.items()})
    return len(records)


def read_records(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _format_value(kind, value):
    if value is None:
        return ""
    if kind in ("floats", "ints", "strs"):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key, text, keys=None):
    """Parse the text form of ``key`` according to its entry in ``keys``."""
    keys = SPEC_KEYS if keys is None else keys
    if key not in keys:
        raise ConfigError(f"unknown key {key!r}")
    kind, default, _ = keys[key]
    text = text.strip()
    try:
        if text == "":
            if kind == "float":
                return None
            if kind in ("floats", "ints", "strs"):
                return ()
            raise ValueError("empty value")
        if kind == "float":
            return float(text)
        if kind == "int":
            return int(float(text)) if float(text).is_integer() else int(text)
        if kind == "bool":
            return _parse_bool(text)
        if kind == "str":
            return text
        items = [s.strip() for s in text.split(",") if s.strip()]
        if kind == "floats":
            return tuple(float(s) for s in items)
        if kind == "ints":
            return tuple(int(s) for s in items)
        return tuple(items)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def spec_from_mapping(mapping, base=None):
    """Build a spec from text values; unknown keys are rejected by name."""
    values = {} if base is None else {f.name: getattr(base, f.name) for f in fields(base)}
    for key, text in mapping.items():
        values[key] = parse_value(key, text) if isinstance(text, str) else text
    return ExperimentSpec(**values)


def write_manifest(path, spec, section="bench"):
    """Write ``spec`` as an INI section that :func:`load_manifest` reads back."""
    cp = configparser.ConfigParser(interpolation=None)
    cp[section] = {k: _format_value(SPEC_KEYS[k][0], getattr(spec, k)) for k in SPEC_KEYS}
    with open(path, "w") as fh:
        cp.write(fh)


def load_manifest(path, section="bench"):
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not cp.has_section(section):
        raise ConfigError(f"{path}: missing section [{section}]")
    return spec_from_mapping(dict(cp[section]))
