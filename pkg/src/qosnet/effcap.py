"""Effective capacity of the typical link and bounds on its spatial distribution.

Rates are in nats per slot.  ``n_symbols`` scales a per-symbol result:
``R_N(thetaT) = N R_1(N thetaT)`` because the slot capacity is
``N ln(1 + SIR)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import (
    BipolarNetwork,
    NetworkParams,
    conditional_outage_probability,
    conditional_success_probability,
    pgfl_constant,
)
from .numerics import DEFAULT_TOL, DomainError, Tolerances, integrate, integrate_semi_infinite
from .service_dist import SIR_CAP, capacity_cap
from .snc_delay import service_mellin_exact

Z_CAP = math.log1p(SIR_CAP)


@dataclass(frozen=True)
class QosExponent:
    """QoS exponent theta (per nat) and slot duration T (slots).

    A larger theta asks for a faster decay of the queue-length tail
    ``P(Q >= q) ~ exp(-theta q)``.
    """

    theta: float
    T: float = 1.0

    def __post_init__(self) -> None:
        if not (self.theta > 0 and self.T > 0):
            raise ValueError("theta and T must be positive")

    @property
    def thetaT(self) -> float:
        return self.theta * self.T


def _theta_of(q) -> float:
    return q.thetaT if isinstance(q, QosExponent) else float(q)


def _per_symbol_rate(network: BipolarNetwork, th: float, tol: Tolerances) -> float:
    if network.n_interferers == 0 or network.params.p == 0:
        return Z_CAP
    # 1 - E[(1 + min(SIR, cap))^-th] = th int_0^zcap e^(-th z) P_s(e^z - 1) dz
    comp = th * integrate(
        lambda z: np.exp(-th * z) * conditional_success_probability(network, np.expm1(z)),
        0.0, Z_CAP, tol)
    if comp < 0.5:
        log_m = math.log1p(-comp)
    else:
        atom = conditional_success_probability(network, math.inf)
        m = service_mellin_exact(network, 1.0 - th, tol) + atom * math.exp(-th * Z_CAP)
        if m <= 0:
            return Z_CAP
        log_m = math.log(m)
    return min(-log_m / th, Z_CAP)


def effective_capacity_conditional(network: BipolarNetwork, q, tol: Tolerances = DEFAULT_TOL,
                                   n_symbols: int = 1) -> float:
    """R(thetaT) = -(1/thetaT) ln E[(1 + SIR)^-thetaT | Phi].

    The SIR is clipped at ``SIR_CAP`` as in the per-slot capacity, so a
    network without interferers returns the capacity cap and the
    small-exponent limit is the mean capped capacity.
    """
    th = _theta_of(q)
    if not th > 0:
        raise DomainError("thetaT must be positive")
    return n_symbols * _per_symbol_rate(network, th * n_symbols, tol)


def psi_integral(network: BipolarNetwork, thetaT: float,
                 tol: Tolerances = Tolerances(rel_tol=1e-11, abs_tol=1e-13)) -> float:
    """Psi = 1 - int_0^1 P_s(t^(-1/thetaT) - 1) dt, integrated as int_0^1 (1 - P_s) dt."""
    if not thetaT > 0:
        raise DomainError("thetaT must be positive")
    if network.n_interferers == 0 or network.params.p == 0:
        return 0.0

    def f(t):
        with np.errstate(divide="ignore", over="ignore"):
            xi = np.expm1(-np.log(t) / thetaT)
        return conditional_outage_probability(network, xi)

    return integrate(f, 0.0, 1.0, tol, initial=16)


def effcap_mean_closed_form(params: NetworkParams, thetaT: float, tol: Tolerances = DEFAULT_TOL,
                            n_symbols: int = 1) -> float:
    """-(1/thetaT) ln(1 - thetaT int_0^inf exp(-k y^(2/a)) (1+y)^(-1-thetaT) dy).

    ``k = lam pi p r^2 C(alpha)``.  This is ``-(1/thetaT) ln E[Psi]``; by
    Jensen's inequality it does not exceed the spatial mean of R(thetaT).
    The log argument is integrated in its complementary form
    ``thetaT int_0^inf e^(-thetaT z) (1 - exp(-k (e^z - 1)^(2/a))) dz``.
    """
    th = thetaT * n_symbols
    if not th > 0:
        raise DomainError("thetaT must be positive")
    k = params.lam * math.pi * params.p * params.r ** 2 * pgfl_constant(params.alpha)
    delta = 2.0 / params.alpha

    def f(z):
        with np.errstate(over="ignore"):
            y = np.expm1(z)
        return np.exp(-th * z) * -np.expm1(-k * y ** delta)

    arg = th * integrate_semi_infinite(f, tol, scale=1.0 / th)
    if not arg > 0:
        raise DomainError("log argument is nonpositive")
    return n_symbols * min(-math.log(arg) / th, Z_CAP)


def effcap_ccdf_markov(mean_estimate: float, x):
    """min(E[R]/x, 1)."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0) or mean_estimate < 0:
        raise ValueError("need x > 0 and a nonnegative mean")
    out = np.minimum(mean_estimate / x_arr, 1.0)
    return float(out) if out.ndim == 0 else out


def nearest_zeta(q, x):
    """zeta' = (1 - e^(-x thetaT)) (1 + 2 thetaT)^(1/2) / thetaT."""
    th = _theta_of(q)
    x_arr = np.asarray(x, dtype=float)
    return -np.expm1(-x_arr * th) * math.sqrt(1.0 + 2.0 * th) / th


def effcap_ccdf_nearest(params: NetworkParams, q, x):
    """P(M_u2(1 - thetaT) < e^(-x thetaT)) for the nearest-interferer transform.

    With ``M_u2(1 - thetaT) = 1 - thetaT ((1 + 2 thetaT) Z)^(-1/2)`` the event
    is ``{Z^(-1/2) > zeta'}``, i.e. the nearest interferer lies beyond
    ``r zeta'^(2/alpha)``, which has probability
    ``exp(-lam pi r^2 zeta'^(4/alpha))``.  With p = 1, M_u2 <= M_gamma and
    the event contains ``{R(thetaT) > x}``; for p < 1 the nearest
    interferer may be silent and no ordering holds in general.
    """
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise ValueError("x must be positive")
    zeta = nearest_zeta(q, x_arr)
    out = np.exp(-params.lam * math.pi * params.r ** 2 * zeta ** (4.0 / params.alpha))
    return float(out) if out.ndim == 0 else out


def effcap_samples(networks: Sequence[BipolarNetwork], q, tol: Tolerances = DEFAULT_TOL,
                   n_symbols: int = 1) -> np.ndarray:
    return np.array([effective_capacity_conditional(net, q, tol, n_symbols) for net in networks])


def empirical_ccdf(samples, x):
    s = np.sort(np.asarray(samples, dtype=float))
    x_arr = np.asarray(x, dtype=float)
    out = 1.0 - np.searchsorted(s, x_arr, side="right") / s.size
    return float(out) if out.ndim == 0 else out
