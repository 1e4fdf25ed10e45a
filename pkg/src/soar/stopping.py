"""Stopping rules evaluated online along a solver trajectory.

Every evaluator is a pure function of a solver state (anything exposing
``k``, ``t``, ``residual_norm`` and ``velocity_norm``) and a rule, so the
same trajectory always produces the same decision.
"""

import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigError

log = logging.getLogger(__name__)

#: Relative slack when comparing ``k dt`` against an a-priori stopping time.
TIME_RTOL = 1e-12


class RuleKind(enum.Enum):
    MOROZOV_DP = "dp"
    TOTAL_ENERGY_DP = "tedp"
    A_PRIORI = "apriori"
    MAX_ITER_ONLY = "maxiter"


class StopReason(enum.Enum):
    DISCREPANCY_CROSSED = "DiscrepancyCrossed"
    ENERGY_CROSSED = "EnergyCrossed"
    A_PRIORI_REACHED = "APrioriReached"
    IMMEDIATE_STOP = "ImmediateStop"
    MAX_ITER_EXCEEDED = "MaxIterExceeded"


@dataclass(frozen=True)
class StoppingRule:
    """Parameters of a stopping rule.

    Parameters
    ----------
    kind : RuleKind
    tau : float
        Discrepancy factor, must exceed 1 for the two discrepancy rules.
    delta : float
        Noise level ``||y_delta - y||``.
    t_star : float, optional
        Stopping time of the a-priori rule.
    table_mode : bool
        Energy rule only: replace ``tau`` by ``1.1 * delta**(4p/(4p+1))``.
    p : float, optional
        Smoothness exponent used by ``table_mode``.
    tau1 : float, optional
        Level of the residual check recorded at an energy-rule stop.
    """

    kind: RuleKind
    tau: float = 2.0
    delta: float = 0.0
    t_star: Optional[float] = None
    table_mode: bool = False
    p: Optional[float] = None
    tau1: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.kind, RuleKind):
            object.__setattr__(self, "kind", RuleKind(self.kind))
        if not self.delta >= 0:
            raise ConfigError(f"noise level delta must be nonnegative, got {self.delta}")
        if self.kind in (RuleKind.MOROZOV_DP, RuleKind.TOTAL_ENERGY_DP) and not self.tau > 1:
            raise ConfigError(f"discrepancy factor tau must exceed 1, got {self.tau}")
        if self.kind is RuleKind.A_PRIORI:
            if self.t_star is None:
                raise ConfigError("a-priori rule needs t_star")
            if not self.t_star >= 0:
                raise ConfigError(f"t_star must be nonnegative, got {self.t_star}")
        if self.table_mode and (self.p is None or not self.p > 0):
            raise ConfigError("table_mode needs a positive smoothness exponent p")

    @property
    def tau_effective(self):
        """Factor multiplying ``delta`` in the energy threshold."""
        if self.kind is RuleKind.TOTAL_ENERGY_DP and self.table_mode:
            return table_tau(self.delta, self.p)
        return self.tau


@dataclass(frozen=True)
class StoppingDecision:
    """Outcome of a stopping rule.

    ``residual_check_held`` is set for energy-rule stops only: whether the
    plain residual was still at least ``tau1 * delta`` at the stopping
    index, the condition under which the energy rule's rate applies.
    """

    fired: bool
    k_star: int
    t_star: float
    reason: StopReason
    chi_value: float
    residual_check_held: Optional[bool] = None

    def as_record(self, rule):
        return {
            "rule": rule.kind.value,
            "k_star": self.k_star,
            "t_star": self.t_star,
            "reason": self.reason.value,
            "chi_value": self.chi_value,
            "residual_check_held": self.residual_check_held,
        }


def table_tau(delta, p):
    """Noise-dependent energy factor ``1.1 * delta**(4p/(4p+1))``."""
    return 1.1 * delta ** (4.0 * p / (4.0 * p + 1.0))


def check_tau(rule, gamma1):
    """Warn when ``tau <= gamma1``; the discrepancy rates assume ``tau > gamma1``.

    Returns whether the condition holds.
    """
    ok = rule.tau > gamma1
    if not ok:
        log.warning("tau=%g does not exceed gamma1=%g; rate guarantees do not apply",
                    rule.tau, gamma1)
    return ok


def eval_morozov(state, rule):
    """``chi = ||A x - y_delta|| - tau delta``; fired when ``chi <= 0``."""
    chi = state.residual_norm - rule.tau * rule.delta
    return chi, chi <= 0.0


def eval_total_energy(state, rule):
    """``chi_te = ||A x - y_delta||^2 + ||v||^2 - (tau_eff delta)^2``."""
    level = rule.tau_effective * rule.delta
    chi = state.residual_norm**2 + state.velocity_norm**2 - level * level
    return chi, chi <= 0.0


def eval_a_priori(state, rule):
    if rule.t_star is None:
        raise ConfigError("a-priori rule needs t_star")
    return state.t >= rule.t_star * (1.0 - TIME_RTOL)


def evaluate(state, rule):
    """Dispatch to the rule's evaluator; returns ``(chi, fired)``."""
    if rule.kind is RuleKind.MOROZOV_DP:
        return eval_morozov(state, rule)
    if rule.kind is RuleKind.TOTAL_ENERGY_DP:
        return eval_total_energy(state, rule)
    if rule.kind is RuleKind.A_PRIORI:
        fired = eval_a_priori(state, rule)
        return state.t - rule.t_star, fired
    return math.nan, False


def decide(state, rule, chi, max_iter_hit=False, tau1=None):
    """Build the decision for a state at which the rule fired (or the cap hit)."""
    if max_iter_hit:
        reason = StopReason.MAX_ITER_EXCEEDED
    elif state.k == 0 and rule.kind in (RuleKind.MOROZOV_DP, RuleKind.TOTAL_ENERGY_DP):
        reason = StopReason.IMMEDIATE_STOP
    elif rule.kind is RuleKind.MOROZOV_DP:
        reason = StopReason.DISCREPANCY_CROSSED
    elif rule.kind is RuleKind.TOTAL_ENERGY_DP:
        reason = StopReason.ENERGY_CROSSED
    else:
        reason = StopReason.A_PRIORI_REACHED
    held = None
    if rule.kind is RuleKind.TOTAL_ENERGY_DP and not max_iter_hit:
        level = rule.tau1 if rule.tau1 is not None else tau1
        if level is not None:
            held = bool(state.residual_norm >= level * rule.delta)
    return StoppingDecision(
        fired=not max_iter_hit,
        k_star=int(state.k),
        t_star=float(state.t),
        reason=reason,
        chi_value=float(chi),
        residual_check_held=held,
    )
