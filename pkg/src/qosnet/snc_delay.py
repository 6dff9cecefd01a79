"""Stochastic-network-calculus delay bound for the typical link.

All SNC quantities live in the SIR (exponential) domain.  Capacity per slot
is ``N ln(1 + SIR)`` nats, so the per-slot service in the SIR domain is
``(1 + SIR)^N`` and its Mellin transform at ``1 - s`` equals
``M_gamma(1 - N s)``.  The optimizer therefore works with the per-symbol
exponent ``v = N s`` and the per-symbol arrival rate ``rho / N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import BipolarNetwork, NetworkParams, conditional_outage_probability
from .numerics import (
    DEFAULT_TOL,
    DomainError,
    NonConvergence,
    Tolerances,
    gauss_2f1,
    grid_bracket,
    integrate_semi_infinite,
    invert_monotone,
    minimize_scalar,
)

KINDS = ("exact_conditional", "nearest_u1", "nearest_u2")
S_MIN = 1e-4
S_MAX = 50.0
N_GRID = 64


class StabilityViolation(ArithmeticError):
    """M_alpha(1+s) M_gamma(1-s) >= 1: this s is infeasible."""


def kbps_to_nats_per_slot(rho_kbps: float, T_ms: float = 1.0) -> float:
    return rho_kbps * T_ms * math.log(2.0)


@dataclass(frozen=True)
class ArrivalEnvelope:
    """(sigma, rho)-bounded fluid arrivals with sigma = 0; rho in nats/slot."""

    rho: float
    sigma: float = 0.0

    def __post_init__(self) -> None:
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.sigma != 0:
            raise ValueError("only sigma = 0 envelopes are supported")


def arrival_mellin(env: ArrivalEnvelope, s: float) -> float:
    return math.exp(env.rho * (s - 1.0))


def _check_s(s: float) -> float:
    if not s < 1:
        raise DomainError("service Mellin transforms are defined here for s < 1")
    return 1.0 - s


def service_mellin_exact(network: BipolarNetwork, s: float, tol: Tolerances = DEFAULT_TOL) -> float:
    """E[(1 + SIR)^(s-1) | Phi] for s < 1.

    Evaluated as (1-s) int_0^inf e^(-(1-s) z) (1 - P_s(e^z - 1)) dz, i.e.
    ``1 + (s-1) int P_s(y) (1+y)^(s-2) dy`` after the substitution
    ``1 + y = e^z`` and the identity ``(1-s) int (1+y)^(s-2) dy = 1``; the
    positive integrand avoids cancellation when the transform is small.
    """
    theta = _check_s(s)
    if network.n_interferers == 0 or network.params.p == 0:
        return 0.0

    def f(z):
        with np.errstate(over="ignore"):
            xi = np.expm1(z)
        return np.exp(-theta * z) * conditional_outage_probability(network, xi)

    val = theta * integrate_semi_infinite(f, tol, scale=1.0 / theta)
    return min(max(val, 0.0), 1.0)


def _u1_quadrature(Z: float, s: float, tol: Tolerances) -> float:
    theta = 1.0 - s

    def f(z):
        with np.errstate(over="ignore"):
            q = np.expm1(z) * Z
        # 1 - 1/(1 + yZ) = yZ / (1 + yZ)
        frac = np.where(np.isinf(q), 1.0, q / (1.0 + np.where(np.isinf(q), 0.0, q)))
        return np.exp(-theta * z) * frac

    return theta * integrate_semi_infinite(f, tol, scale=1.0 / theta)


def service_mellin_nearest_u1(Z: float, s: float, tol: Tolerances = DEFAULT_TOL) -> float:
    """Mellin transform with only the nearest interferer, always active.

    Closed form ``1 + (s-1) 2F1(2-s, 2-s; 3-s; 1-Z) / (Z^(s-1) (2-s))`` for
    ``1 <= Z <= 20``; elsewhere the defining integral
    ``1 + (s-1) int (1+y)^(s-2) / (1 + yZ) dy`` is integrated directly.
    """
    _check_s(s)
    if not Z > 0:
        raise DomainError("Z must be positive")
    if 1.0 <= Z <= 20.0:
        try:
            hyp = gauss_2f1(2 - s, 2 - s, 3 - s, 1 - Z)
            val = 1.0 + (s - 1.0) * hyp / (Z ** (s - 1.0) * (2.0 - s))
            if math.isfinite(val):
                return min(max(val, 0.0), 1.0)
        except NonConvergence:
            pass
    return min(max(_u1_quadrature(Z, s, tol), 0.0), 1.0)


def nearest_u2_raw(Z: float, s: float) -> float:
    """1 + (s-1) [(3-2s) Z]^(-1/2), unclipped (negative for small Z)."""
    _check_s(s)
    if not Z > 0:
        raise DomainError("Z must be positive")
    return 1.0 + (s - 1.0) / math.sqrt((3.0 - 2.0 * s) * Z)


def service_mellin_nearest_u2(Z: float, s: float) -> float:
    """Cauchy-Schwarz form of the nearest-interferer transform, clipped to [0, 1]."""
    return min(max(nearest_u2_raw(Z, s), 0.0), 1.0)


@dataclass
class MellinService:
    """Memoized s -> M_gamma(s) for one realization."""

    kind: str
    fn: Callable[[float], float]
    Z: float | None = None
    clipped: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")

    def eval(self, s: float) -> float:
        s = float(s)
        if s == 1.0:
            return 1.0
        val = self._cache.get(s)
        if val is None:
            val = self.fn(s)
            self._cache[s] = val
        return val

    __call__ = eval

    @classmethod
    def exact(cls, network: BipolarNetwork, tol: Tolerances = DEFAULT_TOL) -> "MellinService":
        return cls("exact_conditional", lambda s: service_mellin_exact(network, s, tol))

    @classmethod
    def nearest(cls, kind: str, Z: float, tol: Tolerances = DEFAULT_TOL) -> "MellinService":
        if not Z > 0:
            raise DomainError("Z must be positive")
        if kind == "nearest_u1":
            return cls(kind, lambda s: service_mellin_nearest_u1(Z, s, tol), Z=Z)
        if kind == "nearest_u2":
            svc = cls(kind, lambda s: 0.0, Z=Z)

            def u2(s, _svc=svc):
                raw = nearest_u2_raw(Z, s)
                if raw < 0:
                    _svc.clipped = True
                return min(max(raw, 0.0), 1.0)

            svc.fn = u2
            return svc
        raise ValueError(f"{kind!r} is not a nearest-interferer kind")

    @classmethod
    def for_network(cls, network: BipolarNetwork, kind: str = "exact_conditional",
                    tol: Tolerances = DEFAULT_TOL) -> "MellinService":
        if kind == "exact_conditional":
            return cls.exact(network, tol)
        if network.n_interferers == 0:
            return cls(kind, lambda s: 0.0, Z=0.0)
        return cls.nearest(kind, network.nearest_ratio(), tol)


def steady_state_kernel(Ma_at: float, Mg_at: float, w: float) -> float:
    """(M_gamma(1-s))^w / (1 - M_alpha(1+s) M_gamma(1-s))."""
    prod = Ma_at * Mg_at
    if not prod < 1:
        raise StabilityViolation(f"M_alpha * M_gamma = {prod} >= 1")
    return Mg_at ** w / (1.0 - prod)


@dataclass(frozen=True)
class DelayBoundResult:
    w: float
    bound: float
    s_star: float
    stability_margin: float
    feasible: bool
    kind: str = "exact_conditional"
    clipped: bool = False
    contiguous: bool = True

    def __post_init__(self) -> None:
        if not 0 <= self.bound <= 1:
            raise ValueError("bound must lie in [0, 1]")
        if self.feasible and not self.stability_margin > 0:
            raise ValueError("feasible results need a positive stability margin")


def scan_grid(s_max: float = S_MAX, n_grid: int = N_GRID) -> np.ndarray:
    return np.geomspace(S_MIN, s_max, n_grid)


def feasible_is_contiguous(mask: Sequence[bool]) -> bool:
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    return idx.size == 0 or bool(idx[-1] - idx[0] + 1 == idx.size)


def delay_violation_bound(service: MellinService, env: ArrivalEnvelope, w: float,
                          tol: Tolerances = Tolerances(rel_tol=1e-6, abs_tol=1e-9),
                          n_symbols: int = 1, s_max: float = S_MAX,
                          n_grid: int = N_GRID) -> DelayBoundResult:
    """inf over s > 0 of the steady-state kernel, clipped to [0, 1].

    ``s`` here is the per-symbol exponent (see the module docstring).  A log
    grid on ``(1e-4, s_max]`` brackets the minimum, Brent's method refines
    it in ``log s``.
    """
    if w < 0:
        raise ValueError("w must be nonnegative")
    rho = env.rho / n_symbols
    grid = scan_grid(s_max, n_grid)
    mg = np.array([service(1.0 - v) for v in grid])
    with np.errstate(over="ignore"):
        prod = np.exp(rho * grid) * mg
    feasible = prod < 1
    contiguous = feasible_is_contiguous(feasible)
    if not feasible.any():
        return DelayBoundResult(w, 1.0, math.nan, float(1.0 - prod.min()), False,
                                service.kind, False, contiguous)
    zero = feasible & (mg == 0)
    if zero.any() and w > 0:
        v = float(grid[np.argmax(zero)])
        return DelayBoundResult(w, 0.0, v, 1.0, True, service.kind, False, contiguous)

    def log_kernel(v: float) -> float:
        m = service(1.0 - v)
        if m == 0:
            return -math.inf if w > 0 else 0.0
        log_prod = rho * v + math.log(m)
        if not log_prod < 0:
            return math.inf
        return w * math.log(m) - math.log(-math.expm1(log_prod))

    values = [log_kernel(v) if ok else math.inf for v, ok in zip(grid, feasible)]
    i, (lo, hi) = grid_bracket(values, grid)
    best_v, best = float(grid[i]), values[i]
    if hi > lo:
        def objective(log_v: float) -> float:
            val = log_kernel(math.exp(log_v))
            return val if math.isfinite(val) else 1e300

        log_v, val = minimize_scalar(objective, (math.log(lo), math.log(hi)), tol)
        if val < best:
            best_v, best = math.exp(log_v), val
    m_best = service(1.0 - best_v)
    margin = 1.0 if m_best == 0 else -math.expm1(rho * best_v + math.log(m_best))
    bound = math.exp(best) if best > -745 else 0.0
    return DelayBoundResult(w, min(bound, 1.0), best_v, margin, True, service.kind,
                            bound > 1.0, contiguous)


def delay_violation_curve(service: MellinService, env: ArrivalEnvelope, w_list: Sequence[float],
                          **kwargs) -> list[DelayBoundResult]:
    return [delay_violation_bound(service, env, w, **kwargs) for w in w_list]


def delay_bound_spatial_ccdf(params: NetworkParams, env: ArrivalEnvelope, w: float, x,
                             tol: Tolerances = Tolerances(rel_tol=1e-5, abs_tol=1e-9),
                             n_symbols: int = 1, kind: str = "nearest_u1"):
    """P(p_v^u(w) > x) for the nearest-interferer bound p_v^u = g(||x_min - R_o||).

    g is non-increasing in the nearest distance d, so the event
    ``{g(d) > x}`` is ``{d < g^-1(x)}`` and its probability is
    ``1 - exp(-lam pi g^-1(x)^2)``.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any((xs <= 0) | (xs >= 1)):
        raise ValueError("x must lie in (0, 1)")
    cache: dict[float, float] = {}

    def g(d: float) -> float:
        if d not in cache:
            Z = (params.r / d) ** params.alpha
            svc = MellinService.nearest(kind, Z)
            cache[d] = delay_violation_bound(svc, env, w, n_symbols=n_symbols).bound
        return cache[d]

    lo = 1e-3 / math.sqrt(params.lam)
    hi = 10.0 / math.sqrt(params.lam)
    g_sup, g_inf = g(lo), g(hi)
    out = np.empty(xs.size)
    for k, target in enumerate(xs):
        if target < g_inf:
            out[k] = 1.0
        elif target > g_sup:
            out[k] = 0.0
        else:
            d = invert_monotone(g, target, (lo, hi), tol)
            out[k] = -math.expm1(-params.lam * math.pi * d * d)
    return float(out[0]) if np.ndim(x) == 0 else out
