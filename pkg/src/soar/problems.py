"""Test problems: a Green's-kernel integral equation and planted diagonal systems.

The integral operator ``(K x)(s) = int_0^1 K(s, t) x(t) dt`` with
``K(s, t) = s (1 - t)`` for ``s <= t`` and ``t (1 - s)`` otherwise is the
inverse of ``-d^2/ds^2`` with homogeneous Dirichlet conditions; its
singular values are ``(j pi)^-2``.  It is discretized with continuous
piecewise-linear elements on a uniform grid.  Iterates are nodal values,
so the Galerkin matrix ``G_ij = <K phi_j, phi_i>`` is divided by the mesh
width ``h``: ``A = G / h`` and ``y_n = <y, phi_j> / h`` approximate the
continuous operator and data at the nodes.
"""

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, DomainError
from .operator import DenseOperator

MIN_NODES = 8

_GAUSS4 = np.polynomial.legendre.leggauss(4)
_GAUSS6 = np.polynomial.legendre.leggauss(6)


class ProblemLabel(enum.Enum):
    EXAMPLE1 = "example1"
    EXAMPLE2 = "example2"
    CUSTOM = "custom"


def _rhs1(s):
    return s * (1.0 - s)


def _sol1(t):
    return np.full_like(np.asarray(t, dtype=float), 2.0)


def _rhs2(s):
    return s**4 * (1.0 - s) ** 3


def _sol2(t):
    return -6.0 * t**2 * (1.0 - t) * (2.0 - 8.0 * t + 7.0 * t**2)


# label -> (right-hand side, exact solution, reference smoothness exponent)
EXAMPLES = {
    ProblemLabel.EXAMPLE1: (_rhs1, _sol1, 0.1125),
    ProblemLabel.EXAMPLE2: (_rhs2, _sol2, 0.5625),
}


@dataclass(frozen=True)
class IntegralProblem:
    """Discrete linear problem with known exact solution.

    ``nodes`` is the grid for FEM problems and ``None`` for diagonal ones;
    it decides how :func:`l2_relative_error` integrates.
    """

    n: int
    op: DenseOperator
    y_exact: np.ndarray
    x_exact: np.ndarray
    p_smoothness: float
    label: ProblemLabel
    nodes: Optional[np.ndarray] = None

    @property
    def h(self):
        return None if self.nodes is None else 1.0 / (self.n - 1)


@dataclass(frozen=True)
class NoisyData:
    """Perturbed data with the realized noise level.

    ``delta`` is the plain Euclidean norm ``||y_delta - y||_2``;
    ``delta_weighted`` multiplies it by ``sqrt(h)`` (a discrete L2 norm)
    and equals ``delta`` for problems without a grid.
    """

    y_delta: np.ndarray
    delta: float
    delta_prime: float
    seed: int
    delta_weighted: float


def green_kernel(s, t):
    s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    return np.where(s <= t, s * (1.0 - t), t * (1.0 - s))


def _element_points(nodes, rule):
    gx, gw = rule
    h = nodes[1] - nodes[0]
    left = nodes[:-1]
    pts = (left[:, None] + 0.5 * h * (gx + 1.0)[None, :]).ravel()
    wts = np.tile(0.5 * h * gw, left.size)
    elem = np.repeat(np.arange(left.size), gx.size)
    return pts, wts, elem


def _basis_at(nodes, pts, elem):
    """Dense ``(len(pts), n)`` matrix of hat-function values."""
    h = nodes[1] - nodes[0]
    loc = (pts - nodes[elem]) / h
    b = np.zeros((pts.size, nodes.size))
    rows = np.arange(pts.size)
    b[rows, elem] = 1.0 - loc
    b[rows, elem + 1] = loc
    return b


def _moment_integrals(nodes, pts, elem, m):
    """``C[q, j] = int_0^{pts[q]} t^m phi_j(t) dt``, exact."""
    n = nodes.size
    h = nodes[1] - nodes[0]
    a, b = nodes[:-1], nodes[1:]

    def partial(lo, hi, up):
        # int_lo^up t^m (hat on [lo, hi]) for the decreasing and increasing halves
        p1 = (up ** (m + 1) - lo ** (m + 1)) / (m + 1)
        p2 = (up ** (m + 2) - lo ** (m + 2)) / (m + 2)
        return (hi * p1 - p2) / h, (p2 - lo * p1) / h

    dec, inc = partial(a, b, b)
    full = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    full[idx, idx] = dec
    full[idx, idx + 1] = inc
    cum = np.vstack([np.zeros(n), np.cumsum(full, axis=0)])
    c = cum[elem].copy()
    pd, pi = partial(nodes[elem], nodes[elem + 1], pts)
    rows = np.arange(pts.size)
    c[rows, elem] += pd
    c[rows, elem + 1] += pi
    return c, cum[-1]


def assemble_galerkin(n):
    """Galerkin matrix ``G_ij = int int K(s,t) phi_i(s) phi_j(t) ds dt``.

    The inner integral is evaluated in closed form from exact moments of
    the hat functions, leaving a piecewise quintic in ``s`` that 4-point
    Gauss-Legendre integrates exactly on each element.
    """
    nodes = np.linspace(0.0, 1.0, n)
    pts, wts, elem = _element_points(nodes, _GAUSS4)
    c0, t0 = _moment_integrals(nodes, pts, elem, 0)
    c1, t1 = _moment_integrals(nodes, pts, elem, 1)
    s = pts[:, None]
    # w_j(s) = (1-s) int_0^s t phi_j + s int_s^1 (1-t) phi_j
    w = (1.0 - s) * c1 + s * ((t0 - t1)[None, :] - (c0 - c1))
    basis = _basis_at(nodes, pts, elem)
    g = (basis * wts[:, None]).T @ w
    return 0.5 * (g + g.T), nodes


def load_vector(n, func):
    """``int_0^1 func(t) phi_j(t) dt`` by 6-point Gauss per element."""
    nodes = np.linspace(0.0, 1.0, n)
    pts, wts, elem = _element_points(nodes, _GAUSS6)
    basis = _basis_at(nodes, pts, elem)
    return (basis * wts[:, None]).T @ func(pts)


def build_integral_problem(n, example=ProblemLabel.EXAMPLE1):
    """Discretized integral equation for one of the two exact examples.

    Parameters
    ----------
    n : int
        Number of grid nodes (``>= 8``), mesh width ``1/(n-1)``.
    example : ProblemLabel or str
        ``example1``: ``y = s(1-s)``, ``x = 2``.
        ``example2``: ``y = s^4 (1-s)^3``, ``x = -6t^2(1-t)(2-8t+7t^2)``.
    """
    if not isinstance(n, (int, np.integer)) or n < MIN_NODES:
        raise ConfigError(f"grid size n must be an integer >= {MIN_NODES}, got {n}")
    try:
        label = ProblemLabel(example)
    except ValueError:
        raise ConfigError(f"unknown example {example!r}") from None
    if label not in EXAMPLES:
        raise ConfigError("build_integral_problem needs example1 or example2")
    rhs, sol, p = EXAMPLES[label]
    g, nodes = assemble_galerkin(n)
    h = 1.0 / (n - 1)
    op = DenseOperator(g / h)
    y = load_vector(n, rhs) / h
    y.setflags(write=False)
    x = sol(nodes)
    x.setflags(write=False)
    nodes.setflags(write=False)
    return IntegralProblem(n=int(n), op=op, y_exact=y, x_exact=x, p_smoothness=p,
                           label=label, nodes=nodes)


def planted_source_problem(sigmas, p, rho=1.0, direction=None, seed=0):
    """Diagonal problem ``A = diag(sigmas)`` whose solution obeys a source condition.

    The exact solution is ``x = -(A^T A)^p w`` with ``||w|| = rho``, so a
    zero initial guess satisfies ``x0 - x = (A^T A)^p w`` exactly.
    ``direction`` fixes ``w`` up to scale; otherwise a seeded random unit
    vector is used.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.ndim != 1 or sigmas.size == 0 or np.any(sigmas <= 0):
        raise ConfigError("sigmas must be a nonempty vector of positive values")
    if direction is None:
        direction = np.random.default_rng(seed).standard_normal(sigmas.size)
    w = np.asarray(direction, dtype=float)
    if w.shape != sigmas.shape or not np.any(w):
        raise ConfigError("direction must be a nonzero vector matching sigmas")
    w = rho * w / np.linalg.norm(w)
    x = -(sigmas**2) ** p * w
    op = DenseOperator.diagonal(sigmas)
    return IntegralProblem(n=sigmas.size, op=op, y_exact=sigmas * x, x_exact=x,
                           p_smoothness=float(p), label=ProblemLabel.CUSTOM)


def noise_generator(seed):
    """Seeded counter-based (Philox) generator used for every data perturbation."""
    return np.random.Generator(np.random.Philox(seed))


def add_noise(problem, delta_prime, seed=0):
    """Multiplicative uniform noise ``y_j (1 + delta' (2 U_j - 1))``, ``U_j ~ U[0,1)``."""
    if not delta_prime >= 0:
        raise DomainError(f"delta_prime must be nonnegative, got {delta_prime}")
    y = problem.y_exact
    u = noise_generator(seed).random(y.size)
    yd = (1.0 + delta_prime * (2.0 * u - 1.0)) * y
    return _noisy(problem, yd, delta_prime, seed)


def add_gaussian_noise(problem, delta, seed=0):
    """Additive noise ``delta * e`` with ``e`` a seeded random unit vector."""
    if not delta >= 0:
        raise DomainError(f"delta must be nonnegative, got {delta}")
    e = noise_generator(seed).standard_normal(problem.y_exact.size)
    yd = problem.y_exact + delta * e / np.linalg.norm(e)
    return _noisy(problem, yd, delta, seed)


def _noisy(problem, yd, delta_prime, seed):
    delta = float(np.linalg.norm(yd - problem.y_exact))
    weight = 1.0 if problem.h is None else math.sqrt(problem.h)
    yd.setflags(write=False)
    return NoisyData(y_delta=yd, delta=delta, delta_prime=float(delta_prime),
                     seed=int(seed), delta_weighted=weight * delta)


def _l2_norm(v, nodes):
    if nodes is None:
        return float(np.linalg.norm(v))
    return float(np.sqrt(np.trapezoid(v * v, nodes)))


def l2_relative_error(x_approx, problem):
    """``||x - x_exact|| / ||x_exact||`` in L2(0,1), trapezoidal rule on the nodes.

    Diagonal problems without a grid use the Euclidean norm.
    """
    x = np.asarray(x_approx, dtype=float)
    if x.shape != problem.x_exact.shape:
        raise ContractError(f"iterate has shape {x.shape}, expected {problem.x_exact.shape}")
    ref = _l2_norm(problem.x_exact, problem.nodes)
    if ref == 0.0:
        raise DomainError("relative error undefined for a zero exact solution")
    return _l2_norm(x - problem.x_exact, problem.nodes) / ref


def projection_error(problem):
    """Consistency residual ``||A x_n - y_n|| / ||y_n||`` of the sampled exact solution."""
    r = problem.op.apply(problem.x_exact) - problem.y_exact
    return float(np.linalg.norm(r) / np.linalg.norm(problem.y_exact))


def save_problem(problem, directory):
    """Write the operator (binary matrix format) and the two vectors as text."""
    from pathlib import Path

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    problem.op.save(d / "operator.bin")
    np.savetxt(d / "y_exact.txt", problem.y_exact, fmt="%.17g")
    np.savetxt(d / "x_exact.txt", problem.x_exact, fmt="%.17g")
    return d
