"""Iterative solvers for ``A x = y_delta`` behind one stepping interface.

Second-order methods discretize the damped flow
``x'' + eta x' + A^T A x = A^T y_delta``:

* ``soar_sv``     damped Stoermer-Verlet (second order in ``dt``),
* ``soar_euler``  symplectic Euler, equal to a three-term semi-iteration.

First-order and Krylov baselines: Landweber, Nesterov, the Chebyshev
``nu``-method with ``nu = 1/2`` and CGNE.  Every step returns a new
:class:`SolverState` and leaves its inputs untouched.
"""

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from . import stopping as _stopping
from .errors import BreakdownError, ConfigError, ContractError, DivergenceError
from .filters import DampingConfig, filter_constants

#: Residuals carried by a recursion are recomputed from scratch this often.
REFRESH_EVERY = 64
DEFAULT_STEP_FRACTION = 0.9
CGNE_BREAKDOWN_TOL = 1e-14
THIN_START = 10_000
THIN_EVERY = 10
# slack on the step-size bound so that dt = bound exactly is accepted
_BOUND_RTOL = 1e-12


class Method(enum.Enum):
    SOAR_SV = "soar_sv"
    SOAR_EULER = "soar_euler"
    LANDWEBER = "landweber"
    NESTEROV = "nesterov"
    CHEBYSHEV = "chebyshev"
    CGNE = "cgne"

    @property
    def is_soar(self):
        return self in (Method.SOAR_SV, Method.SOAR_EULER)


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters.

    ``dt=None`` selects ``0.9 * min(sqrt(2)/||A||, 2/eta)`` for the SOAR
    schemes and ``1/||A||^2`` otherwise.  ``x0``/``v0`` may be arrays or
    scalars (broadcast to the solution dimension).  The step-size bound of
    each method is enforced by :meth:`validated` unless
    ``allow_unstable_step`` is set.
    """

    method: Method
    dt: Optional[float] = None
    eta: Optional[float] = None
    nesterov_alpha: float = 3.1
    x0: object = 0.0
    v0: object = 0.0
    max_iter: int = 100_000
    allow_unstable_step: bool = False

    def __post_init__(self):
        if not isinstance(self.method, Method):
            object.__setattr__(self, "method", Method(self.method))
        if self.dt is not None and not self.dt > 0:
            raise ConfigError(f"step size dt must be positive, got {self.dt}")
        if self.method.is_soar and (self.eta is None or not self.eta > 0):
            raise ConfigError(f"{self.method.value} needs a positive damping eta, got {self.eta}")
        if not self.nesterov_alpha > 3:
            raise ConfigError(f"nesterov_alpha must exceed 3, got {self.nesterov_alpha}")
        if not (isinstance(self.max_iter, (int, np.integer)) and self.max_iter > 0):
            raise ConfigError(f"max_iter must be a positive integer, got {self.max_iter}")

    def step_bound(self, norm):
        """Largest admissible ``dt`` for an operator of norm ``norm``."""
        if norm == 0:
            return math.inf if not self.method.is_soar else 2.0 / self.eta
        if self.method.is_soar:
            return min(math.sqrt(2.0) / norm, 2.0 / self.eta)
        if self.method is Method.CHEBYSHEV:
            return 1.0 / norm**2
        if self.method is Method.CGNE:
            return math.inf
        return 2.0 / norm**2

    def validated(self, op):
        """Copy with ``dt`` resolved against ``op`` and the bound checked.

        Raises
        ------
        ConfigError
            If ``dt`` violates the method's step-size bound and
            ``allow_unstable_step`` is not set.
        """
        norm = op.norm()
        bound = self.step_bound(norm)
        dt = self.dt
        if dt is None:
            if self.method is Method.CGNE:
                dt = 1.0
            elif self.method.is_soar:
                dt = DEFAULT_STEP_FRACTION * bound
            elif norm == 0:
                dt = 1.0
            else:
                dt = 1.0 / norm**2
            return replace(self, dt=dt)
        if self.allow_unstable_step or self.method is Method.CGNE:
            return self
        strict = self.method in (Method.LANDWEBER, Method.NESTEROV)
        too_big = dt >= bound if strict else dt > bound * (1.0 + _BOUND_RTOL)
        if too_big:
            rel = "<" if strict else "<="
            raise ConfigError(
                f"step size dt={dt:g} violates the stability bound dt {rel} {bound:g} "
                f"for {self.method.value} (||A||={norm:g}"
                + (f", eta={self.eta:g})" if self.method.is_soar else ")")
            )
        return self

    def initial_vectors(self, n):
        x0 = np.broadcast_to(np.asarray(self.x0, dtype=float), (n,)).copy()
        v0 = np.broadcast_to(np.asarray(self.v0, dtype=float), (n,)).copy()
        return x0, v0


@dataclass(frozen=True)
class SolverState:
    """Iterate, velocity and cached residual data after ``k`` steps.

    ``aux`` carries per-method caches: ``ax`` (``A x``), ``grad``
    (``A^T (y - A x)``) and the CGNE vectors.  Arrays are never modified in
    place once a state is built.
    """

    x: np.ndarray
    v: np.ndarray
    x_prev: np.ndarray
    k: int
    t: float
    residual_norm: float
    velocity_norm: float
    aux: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def energy(self):
        return self.residual_norm**2 + self.velocity_norm**2


class TrajectoryPoint(NamedTuple):
    k: int
    t: float
    residual_norm: float
    velocity_norm: float

    @property
    def energy(self):
        return self.residual_norm**2 + self.velocity_norm**2


# -- state construction -----------------------------------------------------------

def _check_data(op, ydelta):
    y = np.asarray(ydelta, dtype=float)
    if y.shape != (op.shape[0],):
        raise ContractError(f"data must have length {op.shape[0]}, got shape {y.shape}")
    return y


def initial_state(op, ydelta, cfg):
    """State at ``k = 0`` built from ``cfg.x0`` and ``cfg.v0``."""
    a = op.matrix
    y = _check_data(op, ydelta)
    x0, v0 = cfg.initial_vectors(op.shape[1])
    if not cfg.method.is_soar:
        v0 = np.zeros_like(x0)
    ax = a @ x0
    res = y - ax
    grad = a.T @ res
    aux = {"ax": ax, "grad": grad, "ax_prev": ax}
    if cfg.method is Method.CGNE:
        gamma = float(grad @ grad)
        aux.update(r=res, s=grad, d=grad, gamma=gamma, gamma0=gamma)
    return SolverState(x=x0, v=v0, x_prev=x0, k=0, t=0.0,
                       residual_norm=float(np.linalg.norm(res)),
                       velocity_norm=float(np.linalg.norm(v0)), aux=aux)


def _finish(state, cfg, x, v, ax, y, a, grad=None):
    k = state.k + 1
    res = y - ax
    rn = float(np.linalg.norm(res))
    if not (math.isfinite(rn) and np.isfinite(x).all() and np.isfinite(v).all()):
        raise DivergenceError(k)
    if grad is None:
        grad = a.T @ res
    aux = {"ax": ax, "grad": grad, "ax_prev": state.aux["ax"]}
    t = float(k) if cfg.method is Method.CGNE else k * cfg.dt
    return SolverState(x=x, v=v, x_prev=state.x, k=k, t=t,
                       residual_norm=rn, velocity_norm=float(np.linalg.norm(v)), aux=aux)


def _require(cfg, *methods):
    if cfg.method not in methods:
        raise ConfigError(f"step function for {[m.value for m in methods]} "
                          f"called with method {cfg.method.value}")


# -- step functions ---------------------------------------------------------------

def step_soar_sv(state, op, ydelta, cfg):
    """One damped Stoermer-Verlet step.

    The half-step velocity equation is linear in ``v_half`` and is solved
    by a scalar division::

        v_half = (v + dt/2 A^T(y - A x)) / (1 + dt eta / 2)
        x+     = x + dt v_half
        v+     = v_half + dt/2 (A^T(y - A x+) - eta v_half)
    """
    _require(cfg, Method.SOAR_SV)
    a, y, dt, eta = op.matrix, ydelta, cfg.dt, cfg.eta
    v_half = (state.v + 0.5 * dt * state.aux["grad"]) / (1.0 + 0.5 * dt * eta)
    x = state.x + dt * v_half
    ax = a @ x
    grad = a.T @ (y - ax)
    v = v_half + 0.5 * dt * (grad - eta * v_half)
    return _finish(state, cfg, x, v, ax, y, a, grad)


def step_soar_euler(state, op, ydelta, cfg):
    """Symplectic Euler: ``x+ = x + dt v``, ``v+ = v + dt (A^T(y - A x+) - eta v)``."""
    _require(cfg, Method.SOAR_EULER)
    a, y, dt, eta = op.matrix, ydelta, cfg.dt, cfg.eta
    x = state.x + dt * state.v
    ax = a @ x
    grad = a.T @ (y - ax)
    v = state.v + dt * (grad - eta * state.v)
    return _finish(state, cfg, x, v, ax, y, a, grad)


def euler_semi_iterative_coefficients(cfg):
    """``(mu, omega)`` of the three-term form of the symplectic Euler scheme.

    ``x_{k+1} = x_k + mu (x_k - x_{k-1}) + omega dt A^T(y - A x_k)``
    with ``mu = 1 - dt eta`` and ``omega = dt``.
    """
    return 1.0 - cfg.dt * cfg.eta, cfg.dt


def step_landweber(state, op, ydelta, cfg):
    _require(cfg, Method.LANDWEBER)
    a, y = op.matrix, ydelta
    x = state.x + cfg.dt * state.aux["grad"]
    return _finish(state, cfg, x, state.v, a @ x, y, a)


def nesterov_momentum(k, alpha):
    """Momentum factor ``(k-1)/(k+alpha-1)`` of step ``k >= 1``."""
    return (k - 1.0) / (k + alpha - 1.0)


def step_nesterov(state, op, ydelta, cfg):
    """``z = x_k + m_k (x_k - x_{k-1})``, ``x_{k+1} = z + dt A^T(y - A z)``."""
    _require(cfg, Method.NESTEROV)
    a, y = op.matrix, ydelta
    m = nesterov_momentum(state.k + 1, cfg.nesterov_alpha)
    z = state.x + m * (state.x - state.x_prev)
    az = state.aux["ax"] + m * (state.aux["ax"] - state.aux["ax_prev"])
    x = z + cfg.dt * (a.T @ (y - az))
    return _finish(state, cfg, x, state.v, a @ x, y, a)


def chebyshev_coefficients(k, nu=0.5):
    """``(mu_k, omega_k)`` of the ``nu``-method, step ``k >= 1``.

    ``x_k = x_{k-1} + mu_k (x_{k-1} - x_{k-2}) + omega_k dt A^T(y - A x_{k-1})``
    with ``dt ||A||^2 <= 1``.  For ``nu = 1/2`` these reduce to
    ``mu_k = (2k-3)/(2k+1)`` and ``omega_k = 4(2k-1)/(2k+1)``.
    """
    if k < 1:
        raise ContractError(f"step index must be >= 1, got {k}")
    if k == 1:
        return 0.0, (4.0 * nu + 2.0) / (4.0 * nu + 1.0)
    mu = ((k - 1.0) * (2 * k - 3.0) * (2 * k + 2 * nu - 1.0)
          / ((k + 2 * nu - 1.0) * (2 * k + 4 * nu - 1.0) * (2 * k + 2 * nu - 3.0)))
    omega = (4.0 * (2 * k + 2 * nu - 1.0) * (k + nu - 1.0)
             / ((k + 2 * nu - 1.0) * (2 * k + 4 * nu - 1.0)))
    return mu, omega


def step_chebyshev(state, op, ydelta, cfg):
    _require(cfg, Method.CHEBYSHEV)
    a, y = op.matrix, ydelta
    mu, omega = chebyshev_coefficients(state.k + 1)
    x = state.x + mu * (state.x - state.x_prev) + omega * cfg.dt * state.aux["grad"]
    return _finish(state, cfg, x, state.v, a @ x, y, a)


def step_cgne(state, op, ydelta, cfg):
    """Conjugate gradients on ``A^T A x = A^T y`` (CGLS form).

    Raises
    ------
    BreakdownError
        When the search direction has (numerically) zero curvature, i.e.
        ``||A d|| <= eps ||A|| ||d||``, or the normal-equation residual has
        dropped below ``eps`` times its initial value.
    """
    _require(cfg, Method.CGNE)
    a, y = op.matrix, ydelta
    aux = state.aux
    d = aux["d"]
    q = a @ d
    qq = float(q @ q)
    k = state.k + 1
    tiny = CGNE_BREAKDOWN_TOL * op.norm()
    if (qq <= (tiny * np.linalg.norm(d)) ** 2
            or aux["gamma"] <= CGNE_BREAKDOWN_TOL**2 * aux["gamma0"]):
        raise BreakdownError(k)
    step = aux["gamma"] / qq
    x = state.x + step * d
    if k % REFRESH_EVERY == 0:
        ax = a @ x
        r = y - ax
    else:
        r = aux["r"] - step * q
        ax = y - r
    s = a.T @ r
    gamma = float(s @ s)
    d_new = s + (gamma / aux["gamma"]) * d
    rn = float(np.linalg.norm(r))
    if not (math.isfinite(rn) and np.isfinite(x).all()):
        raise DivergenceError(k)
    new_aux = {"ax": ax, "grad": s, "ax_prev": aux["ax"], "r": r, "s": s,
               "d": d_new, "gamma": gamma, "gamma0": aux["gamma0"]}
    return SolverState(x=x, v=state.v, x_prev=state.x, k=k, t=float(k),
                       residual_norm=rn, velocity_norm=0.0, aux=new_aux)


STEPPERS = {
    Method.SOAR_SV: step_soar_sv,
    Method.SOAR_EULER: step_soar_euler,
    Method.LANDWEBER: step_landweber,
    Method.NESTEROV: step_nesterov,
    Method.CHEBYSHEV: step_chebyshev,
    Method.CGNE: step_cgne,
}


def step(state, op, ydelta, cfg):
    return STEPPERS[cfg.method](state, op, ydelta, cfg)


# -- stability of the SOAR discretization ----------------------------------------------

def iteration_matrix(op, cfg):
    """Dense ``2n x 2n`` matrix mapping ``(x_k, v_k)`` to ``(x_{k+1}, v_{k+1})``.

    Homogeneous part (``y = 0``) of the Stoermer-Verlet step.
    """
    _require(cfg, Method.SOAR_SV)
    dt, eta = cfg.dt, cfg.eta
    n = op.shape[1]
    m = op.matrix.T @ op.matrix
    eye = np.eye(n)
    c = 1.0 / (1.0 + 0.5 * dt * eta)
    # v_half = c (v - dt/2 M x);  x+ = x + dt v_half
    xx = eye - 0.5 * dt * dt * c * m
    xv = dt * c * eye
    # v+ = (1 - dt eta/2) v_half - dt/2 M x+
    damp = 1.0 - 0.5 * dt * eta
    vx = -0.5 * dt * c * damp * m - 0.5 * dt * m @ xx
    vv = c * damp * eye - 0.5 * dt * m @ xv
    return np.block([[xx, xv], [vx, vv]])


def iteration_eigenvalues(dt, eta, lam):
    """Complex pairs ``(mu_plus, mu_minus)`` of the Stoermer-Verlet map per mode."""
    lam = np.asarray(lam, dtype=float)
    b = 2.0 - dt * dt * lam
    disc = np.sqrt((b * b - (4.0 - dt * dt * eta * eta)).astype(complex))
    den = 2.0 + dt * eta
    return (b + disc) / den, (b - disc) / den


def iteration_matrix_spectrum(op, cfg):
    """Moduli ``|mu_pm|`` over the spectrum of ``A^T A`` (zeros included)."""
    if not cfg.method.is_soar:
        raise ConfigError("iteration_matrix_spectrum needs a SOAR method")
    n = op.shape[1]
    lam = op.svd().eigenvalues
    lam = np.concatenate([lam, np.zeros(n - lam.size)])
    plus, minus = iteration_eigenvalues(cfg.dt, cfg.eta, lam)
    return np.concatenate([np.abs(plus), np.abs(minus)])


# -- driver --------------------------------------------------------------------------

def run(op, ydelta, cfg, rule, thin_start=THIN_START, thin_every=THIN_EVERY):
    """Step until ``rule`` fires or ``cfg.max_iter`` steps are taken.

    Returns
    -------
    state : SolverState
    decision : StoppingDecision
        ``reason`` is ``MaxIterExceeded`` (not an exception) when the cap
        is reached without the rule firing.
    trajectory : list of TrajectoryPoint
        Every step below ``thin_start``, every ``thin_every``-th after,
        plus the final state.
    """
    cfg = cfg.validated(op)
    y = _check_data(op, ydelta)
    tau1 = None
    if rule.kind is _stopping.RuleKind.TOTAL_ENERGY_DP and rule.tau1 is None:
        tau1 = _default_tau1(op, cfg)
    state = initial_state(op, y, cfg)
    stepper = STEPPERS[cfg.method]
    traj = [_point(state)]
    chi, fired = _stopping.evaluate(state, rule)
    while not fired:
        if state.k >= cfg.max_iter:
            if traj[-1].k != state.k:
                traj.append(_point(state))
            return state, _stopping.decide(state, rule, chi, max_iter_hit=True), traj
        state = stepper(state, op, y, cfg)
        if state.k < thin_start or state.k % thin_every == 0:
            traj.append(_point(state))
        chi, fired = _stopping.evaluate(state, rule)
    if traj[-1].k != state.k:
        traj.append(_point(state))
    return state, _stopping.decide(state, rule, chi, tau1=tau1), traj


def _default_tau1(op, cfg):
    # just above gamma1; first-order methods have |r| <= 1
    eps = 1e-6
    if not cfg.method.is_soar:
        return 1.0 + eps
    return filter_constants(DampingConfig.from_operator(op, cfg.eta)).gamma1 + eps


def _point(state):
    return TrajectoryPoint(state.k, state.t, state.residual_norm, state.velocity_norm)


def write_trajectory(path, trajectory):
    """CSV with columns ``k, t, residual_norm, velocity_norm, energy``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t", "residual_norm", "velocity_norm", "energy"])
        for p in trajectory:
            w.writerow([p.k, repr(p.t), repr(p.residual_norm), repr(p.velocity_norm),
                        repr(p.energy)])
    return len(trajectory)
