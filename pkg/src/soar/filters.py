"""Spectral filters of the damped second-order flow.

For the mode equation ``xi'' + eta xi' + lam xi = lam * f`` the solution at
time ``t`` is ``r xi(0) + phi xi'(0) + g * lam * f`` where

* ``r(t, lam)``   bias: response to a unit displacement with zero velocity,
* ``phi(t, lam)`` response to a unit initial velocity,
* ``g(t, lam)``   response to a unit constant forcing, ``r = 1 - lam g``.

As a regularization method the time plays the role of ``1/alpha``.  The
sign of ``eta**2 - 4 lam`` selects the overdamped, underdamped or critical
closed form; all three are evaluated through numerically stable
rearrangements so the values are continuous across the regime boundary.
"""

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError

#: Relative half-width of the band around lam = eta**2/4 routed to the
#: critical-damping formulas.
EPS_SWITCH = 1e-9

_SERIES_TERMS = 40


class Regime(enum.Enum):
    OVERDAMPED = "overdamped"
    UNDERDAMPED = "underdamped"
    CRITICAL = "critical"


_REGIME_CODES = (Regime.OVERDAMPED, Regime.UNDERDAMPED, Regime.CRITICAL)


@dataclass(frozen=True)
class DampingConfig:
    """Damping ``eta`` together with the spectral data the constants need.

    ``spectrum`` (optional) holds the eigenvalues ``sigma_j**2`` of
    ``A^T A``; it is only consulted when ``eta <= 2 ||A||``.
    """

    eta: float
    operator_norm_sq: float
    spectrum: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError(f"damping eta must be positive, got {self.eta}")
        if not self.operator_norm_sq > 0:
            raise DomainError(f"operator_norm_sq must be positive, got {self.operator_norm_sq}")
        if self.spectrum is not None:
            spec = np.sort(np.asarray(self.spectrum, dtype=float))[::-1]
            object.__setattr__(self, "spectrum", spec)

    @classmethod
    def from_operator(cls, op, eta):
        lam = op.svd().eigenvalues
        return cls(eta=eta, operator_norm_sq=op.norm() ** 2, spectrum=lam)

    @property
    def regime(self):
        """Damping regime of the whole operator (not of one spectral point)."""
        eta2 = self.eta**2
        band = EPS_SWITCH * eta2
        if eta2 - 4 * self.operator_norm_sq > band:
            return Regime.OVERDAMPED
        spec = self._spectrum()
        if np.any(np.abs(4 * spec - eta2) <= band):
            return Regime.CRITICAL
        return Regime.UNDERDAMPED

    def _spectrum(self):
        if self.spectrum is None:
            return np.array([self.operator_norm_sq])
        return self.spectrum

    def overdamped_edge(self):
        """Largest spectral point strictly below the critical band, or None."""
        eta2 = self.eta**2
        if eta2 - 4 * self.operator_norm_sq > EPS_SWITCH * eta2:
            return self.operator_norm_sq
        spec = self._spectrum()
        below = spec[eta2 - 4 * spec > EPS_SWITCH * eta2]
        return float(below.max()) if below.size else None


@dataclass(frozen=True)
class FilterEvaluation:
    alpha: float
    lam: float
    g: float
    phi: float
    r: float
    regime: Regime


@dataclass(frozen=True)
class FilterConstants:
    """Bounds ``|r| <= gamma1``, ``|phi| <= gamma2``,
    ``sqrt(lam) |g| <= gamma_star / sqrt(alpha)`` valid for ``alpha <= alpha_bar``.
    """

    gamma1: float
    gamma2: float
    gamma_star: float
    alpha_bar: float


@dataclass(frozen=True)
class SourceCondition:
    """Hoelder source condition ``x0 - x_true = (A^T A)^p w`` with ``||w|| <= rho``."""

    p: float
    rho: float

    def __post_init__(self):
        if not self.p > 0:
            raise DomainError(f"source exponent p must be positive, got {self.p}")
        if not self.rho >= 0:
            raise DomainError(f"source radius rho must be nonnegative, got {self.rho}")


# -- mode responses -------------------------------------------------------------

def regime_codes(eta, lam):
    """0 = overdamped, 1 = underdamped, 2 = critical, per spectral point."""
    lam = np.asarray(lam, dtype=float)
    eta2 = eta * eta
    d = eta2 - 4.0 * lam
    band = EPS_SWITCH * eta2
    return np.where(np.abs(d) <= band, 2, np.where(d > 0, 0, 1))


def mode_response(eta, t, lam):
    """Vectorized ``(r, g, phi, dphi)`` at times ``t`` and spectral points ``lam``.

    ``dphi`` is the time derivative of ``phi``; the time derivatives of ``r``
    and ``g`` are ``-lam * phi`` and ``phi``.  ``lam = 0`` is allowed.
    """
    t, lam = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(lam, dtype=float))
    if np.any(lam < 0):
        raise DomainError("spectral points must be nonnegative")
    if np.any(t < 0):
        raise DomainError("time must be nonnegative")
    shape = t.shape
    t = t.ravel()
    lam = lam.ravel()

    r = np.empty_like(t)
    g = np.empty_like(t)
    phi = np.empty_like(t)
    dphi = np.empty_like(t)

    eta2 = eta * eta
    d = eta2 - 4.0 * lam
    codes = regime_codes(eta, lam)
    over = codes == 0
    omega = np.sqrt(np.where(over, d, 0.0))
    x = 0.5 * eta * t

    # overdamped modes once the two exponentials have separated
    sep = over & (omega * t >= 1.0)
    if np.any(sep):
        ts, ls, ws = t[sep], lam[sep], omega[sep]
        a = 2.0 * ls / (eta + ws)          # (eta - omega)/2 without cancellation
        b = 0.5 * (eta + ws)
        ea = np.exp(-a * ts)
        eb = np.exp(-b * ts)
        s = -np.expm1(-ws * ts) / ws
        with np.errstate(divide="ignore", invalid="ignore"):
            e_a = np.where(a > 0, -np.expm1(-a * ts) / a, ts)
        r[sep] = ea * (1.0 + a * s)
        phi[sep] = ea * s
        dphi[sep] = (b * eb - a * ea) / ws
        g[sep] = (2.0 / (eta + ws)) * (e_a - ea * s)

    # remaining modes: e^{-x} [C0(z) + x C1(z)] with z^2 = d t^2 / 4
    rest = ~sep
    if np.any(rest):
        tr, lr, xr = t[rest], lam[rest], x[rest]
        u = np.where(codes[rest] == 2, 0.0, 0.25 * d[rest] * tr * tr)
        z = np.sqrt(np.abs(u))
        pos = u > 0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            c0 = np.where(pos, np.cosh(z), np.cos(z))
            c1 = np.where(z == 0, 1.0, np.where(pos, np.sinh(z), np.sin(z)) / z)
        ex = np.exp(-xr)
        rr = ex * (c0 + xr * c1)
        r[rest] = rr
        phi[rest] = tr * ex * c1
        dphi[rest] = ex * (c0 - xr * c1)
        with np.errstate(divide="ignore", invalid="ignore"):
            g[rest] = (1.0 - rr) / lr

    # short times: 1 - r cancels, use the Taylor series of g instead
    short = (eta * t <= 2.0) & (lam * t * t <= 1.0)
    if np.any(short):
        gs = _g_series(eta, t[short], lam[short])
        g[short] = gs
        r[short] = 1.0 - lam[short] * gs

    return (r.reshape(shape), g.reshape(shape), phi.reshape(shape), dphi.reshape(shape))


def _g_series(eta, t, lam):
    # g'' + eta g' + lam g = 1, g(0) = g'(0) = 0, summed as terms c_k t^k
    et = eta * t
    lt2 = lam * t * t
    prev = np.zeros_like(t)          # c_1 t
    cur = 0.5 * t * t                # c_2 t^2
    total = cur.copy()
    for k in range(1, _SERIES_TERMS):
        nxt = -(et * (k + 1) * cur + lt2 * prev) / ((k + 2) * (k + 1))
        total += nxt
        prev, cur = cur, nxt
    return total


# -- public filter API ------------------------------------------------------------

def filter_arrays(eta, alpha, lam):
    """Vectorized ``(g, phi, r, regime_code)`` on broadcast ``alpha``/``lam`` grids."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise DomainError("alpha must be positive")
    r, g, phi, _ = mode_response(eta, 1.0 / alpha, lam)
    return g, phi, r, regime_codes(eta, np.broadcast_to(lam, np.shape(r)))


def evaluate_filters(cfg, alpha, lam):
    """Generator functions ``g_alpha``, ``phi_alpha`` and bias ``r_alpha`` at one point."""
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if lam > cfg.operator_norm_sq * (1 + 1e-12):
        raise DomainError(f"lambda={lam} exceeds ||A||^2={cfg.operator_norm_sq}")
    r, g, phi, _ = mode_response(cfg.eta, 1.0 / alpha, lam)
    code = int(regime_codes(cfg.eta, lam))
    return FilterEvaluation(alpha=float(alpha), lam=float(lam), g=float(g),
                            phi=float(phi), r=float(r), regime=_REGIME_CODES[code])


def filter_constants(cfg):
    eta = cfg.eta
    if cfg.regime is Regime.OVERDAMPED:
        omega = math.sqrt(eta * eta - 4.0 * cfg.operator_norm_sq)
        return FilterConstants(
            gamma1=eta / (2.0 * omega) + 0.5,
            gamma2=max(eta / 2.0, 1.0) / omega,
            gamma_star=math.sqrt(eta) / omega,
            alpha_bar=math.inf,
        )
    # oscillating modes: |r| <= 1, |phi| <= 2/(e eta), sqrt(lam)|g| <= 4/sqrt(alpha)
    gamma1, gamma2, gamma_star = 1.0, 2.0 / (math.e * eta), 4.0
    edge = cfg.overdamped_edge()
    if edge is not None:
        omega = math.sqrt(eta * eta - 4.0 * edge)
        gamma1 = max(gamma1, eta / (2.0 * omega) + 0.5)
        gamma2 = max(gamma2, max(eta / 2.0, 1.0) / omega)
        gamma_star = max(gamma_star, math.sqrt(eta) / omega)
    return FilterConstants(gamma1=float(gamma1), gamma2=float(gamma2),
                           gamma_star=float(gamma_star), alpha_bar=float(eta * eta))


def qualification_constant(cfg, p):
    """Constant ``gamma`` with ``sup |r_a| lam^p, sup |phi_a| lam^p <= gamma a^p``.

    Valid for ``0 < alpha <= ||A||^2``.
    """
    if not p > 0:
        raise DomainError(f"qualification exponent must be positive, got {p}")
    eta = cfg.eta
    norm_sq = cfg.operator_norm_sq
    regime = cfg.regime
    parts = []
    edge = cfg.overdamped_edge()
    if edge is not None:
        omega = math.sqrt(eta * eta - 4.0 * edge)
        bound = max(eta / (2.0 * omega) + 0.5, max(eta / 2.0, 1.0) / omega)
        parts.append((p * eta / math.e) ** p * bound)
    if regime is not Regime.OVERDAMPED:
        parts.append(0.5 * (eta + 2.0 * norm_sq)
                     * (2.0 * (p + 1.0) / (math.e * eta)) ** (p + 1.0)
                     * norm_sq**p)
    if regime is Regime.CRITICAL:
        parts.append(0.5 * (eta + 2.0 * norm_sq)
                     * ((p + 1.0) / math.e) ** (p + 1.0)
                     * (eta / 2.0) ** (p - 2.0) * max(eta / 2.0, 1.0))
    return float(max(parts))


def a_priori_time(sc, cfg, delta):
    """Stopping time ``T* = (2 gamma rho / delta)^{2/(2p+1)}``."""
    if not delta > 0:
        raise DomainError(f"noise level must be positive, got {delta}")
    gamma = qualification_constant(cfg, sc.p)
    e = 2.0 / (2.0 * sc.p + 1.0)
    return (2.0 * gamma) ** e * sc.rho**e * delta ** (-e)


def a_priori_error_bound(sc, cfg, delta):
    """Right-hand side ``(1 + gamma_*) (2 gamma rho)^{1/(2p+1)} delta^{2p/(2p+1)}``."""
    gamma = qualification_constant(cfg, sc.p)
    gstar = filter_constants(cfg).gamma_star
    q = 1.0 / (2.0 * sc.p + 1.0)
    return (1.0 + gstar) * (2.0 * gamma) ** q * sc.rho**q * delta ** (2.0 * sc.p * q)


def closed_form_solution(op, cfg, x0, v0, y, t):
    """Exact state ``(x(t), x'(t))`` of the damped flow via the singular system."""
    m, n = op.shape
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    y = np.asarray(y, dtype=float)
    if x0.shape != (n,) or v0.shape != (n,) or y.shape != (m,):
        raise ContractError("closed_form_solution: x0, v0 must have length n and y length m")
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    if t == 0:
        return x0.copy(), v0.copy()
    sys_ = op.svd()
    u = sys_.right_vectors
    s = sys_.singular_values
    lam = s * s
    xi0 = u.T @ x0
    nu0 = u.T @ v0
    data = s * (sys_.left_vectors.T @ y)     # components of A^T y
    r, g, phi, dphi = mode_response(cfg.eta, t, lam)
    xi = r * xi0 + phi * nu0 + g * data
    nu = -lam * phi * xi0 + dphi * nu0 + phi * data
    # orthogonal complement of span{u_j}: lam = 0 dynamics, no forcing
    x_perp = x0 - u @ xi0
    v_perp = v0 - u @ nu0
    eta = cfg.eta
    phi0 = -math.expm1(-eta * t) / eta
    x = u @ xi + x_perp + phi0 * v_perp
    v = u @ nu + math.exp(-eta * t) * v_perp
    return x, v


def write_filter_curve(path, cfg, alphas, lams):
    """CSV with columns ``alpha, lambda, g, phi, r, regime``; one row per pair."""
    alphas = np.asarray(alphas, dtype=float)
    lams = np.asarray(lams, dtype=float)
    aa, ll = np.meshgrid(alphas, lams, indexing="ij")
    g, phi, r, codes = filter_arrays(cfg.eta, aa, ll)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "lambda", "g", "phi", "r", "regime"])
        for row in zip(aa.ravel(), ll.ravel(), g.ravel(), phi.ravel(), r.ravel(), codes.ravel()):
            w.writerow([repr(float(v)) for v in row[:5]] + [_REGIME_CODES[int(row[5])].value])
    return aa.size
