"""Distribution of the per-slot capacity and of the cumulative service process.

Capacities are in nats per slot, ``C = N ln(1 + SIR)``.  A slot with no
active interferer has infinite SIR in the interference-limited model; its
capacity is clipped at ``N ln(1 + SIR_CAP)`` so every moment stays finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import BipolarNetwork, conditional_outage_probability, conditional_success_probability
from .numerics import (
    DEFAULT_TOL,
    Divergence,
    DomainError,
    NonConvergence,
    NumericsError,
    Tolerances,
    integrate,
    integrate_semi_infinite,
    std_normal_cdf,
)

SIR_CAP = 1e12


class ResolutionError(ValueError):
    pass


def capacity_cap(n_symbols: int = 1) -> float:
    return n_symbols * math.log1p(SIR_CAP)


def instantaneous_capacity(sir, n_symbols: int = 1):
    """N ln(1 + SIR) with infinite SIR clipped at ``SIR_CAP``."""
    if n_symbols < 1:
        raise ValueError("n_symbols must be a positive integer")
    s = np.minimum(np.asarray(sir, dtype=float), SIR_CAP)
    if np.any(s < 0):
        raise ValueError("SIR must be nonnegative")
    out = n_symbols * np.log1p(s)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CapacityMarginal:
    """Per-slot capacity law: vectorized cdf plus its first two moments.

    ``upper`` is the right end of the support (``inf`` if unbounded); the
    quadratures against the marginal stop there.
    """

    cdf: Callable[[np.ndarray], np.ndarray]
    mean: float
    variance: float
    upper: float = math.inf

    def __post_init__(self) -> None:
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")

    def ccdf(self, z):
        return 1.0 - np.asarray(self.cdf(z), dtype=float)


def _network_ccdf(network: BipolarNetwork, n_symbols: int):
    cap = capacity_cap(n_symbols)

    def ccdf(z):
        z = np.asarray(z, dtype=float)
        zc = np.clip(z, 0.0, cap)
        out = conditional_success_probability(network, np.expm1(zc / n_symbols).ravel()).reshape(z.shape)
        return np.where(z < 0, 1.0, np.where(z >= cap, 0.0, out))

    def cdf(z):
        z = np.asarray(z, dtype=float)
        zc = np.clip(z, 0.0, cap)
        out = conditional_outage_probability(network, np.expm1(zc / n_symbols).ravel()).reshape(z.shape)
        return np.where(z < 0, 0.0, np.where(z >= cap, 1.0, out))

    return cdf, ccdf


def capacity_marginal_from_network(network: BipolarNetwork, n_symbols: int = 1,
                                   tol: Tolerances = DEFAULT_TOL) -> CapacityMarginal:
    """F_C(z) = 1 - P_s(e^(z/N) - 1), with moments by quadrature."""
    cap = capacity_cap(n_symbols)
    cdf, ccdf = _network_ccdf(network, n_symbols)
    # E[C] = int G, E[C^2] = int 2 z G over the capped support
    m1, m2 = integrate(lambda z: np.vstack([ccdf(z), 2 * z * ccdf(z)]), 0.0, cap, tol)
    return CapacityMarginal(cdf=cdf, mean=float(m1), variance=max(float(m2 - m1 * m1), 0.0), upper=cap)


def _filon_q(theta: np.ndarray) -> np.ndarray:
    # (sin x - x cos x) / x^2, with its series near 0
    small = np.abs(theta) < 1e-3
    th = np.where(small, 1.0, theta)
    exact = (np.sin(th) - th * np.cos(th)) / th ** 2
    return np.where(small, theta / 3 - theta ** 3 / 30, exact)


def capacity_char_fn(network: BipolarNetwork, n_symbols: int = 1, points: int = 4000):
    """Characteristic function of the capped per-slot capacity.

    phi(t) = 1 + j t int_0^cap e^(jtz) P(C > z) dz.  The ccdf is tabulated
    once on a grid (geometric near 0, uniform beyond) and each segment is
    integrated exactly against e^(jtz) with linear interpolation, so the
    cost per frequency does not grow with t.
    """
    N = n_symbols
    cap = capacity_cap(N)
    _, ccdf = _network_ccdf(network, N)
    atom = float(conditional_success_probability(network, math.inf)) if network.n_interferers else 1.0
    coarse = N * np.linspace(0, math.log1p(SIR_CAP), 400)
    above = np.nonzero(ccdf(coarse) - atom > 1e-13)[0]
    z_end = float(coarse[min(above[-1] + 1, coarse.size - 1)]) if above.size else float(coarse[1])
    strength = max(1.0, float(network.gains.sum()))
    knee = min(N, z_end)
    z_small = min(N * 1e-7 / strength, knee / 10)
    n_geo = points // 5
    z = np.unique(np.concatenate([
        [0.0],
        np.geomspace(z_small, knee, n_geo),
        np.linspace(knee, z_end, max(points - n_geo, 2)),
    ]))
    g = ccdf(z)
    h = np.diff(z)
    c = 0.5 * (z[1:] + z[:-1])
    g_mid = 0.5 * (g[1:] + g[:-1])
    dg = np.diff(g)

    def phi(t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(t_arr.size, dtype=complex)
        for start in range(0, t_arr.size, 256):
            tt = t_arr[start:start + 256, None]
            theta = 0.5 * tt * h[None, :]
            seg = np.exp(1j * tt * c[None, :]) * h[None, :] * (
                g_mid[None, :] * np.sinc(theta / np.pi) + 0.5j * dg[None, :] * _filon_q(theta))
            body = 1j * tt[:, 0] * seg.sum(axis=1)
            # ccdf equals the no-interferer atom on [z_end, cap)
            body += atom * (np.exp(1j * tt[:, 0] * cap) - np.exp(1j * tt[:, 0] * z_end))
            out[start:start + 256] = 1.0 + body
        return out.reshape(np.shape(t)) if np.ndim(t) else complex(out[0])

    return phi


def clt_service_cdf(marginal: CapacityMarginal, n: int, x):
    """Normal approximation of the n-slot cumulative capacity cdf.

    Uses the standard deviation sqrt(n var) in the denominator.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    mu = n * marginal.mean
    var = n * marginal.variance
    if var == 0:
        x_arr = np.asarray(x, dtype=float)
        if np.any(x_arr != mu):
            raise DomainError("degenerate marginal: cdf undefined off the mean")
        return 0.5 if x_arr.ndim == 0 else np.full(x_arr.shape, 0.5)
    return std_normal_cdf((np.asarray(x, dtype=float) - mu) / math.sqrt(var))


def frechet_bounds(marginals: Sequence, z: float, grid: int = 64) -> tuple[float, float]:
    """Frechet-Hoeffding bounds on the cdf of a sum with given marginals.

    The simplex ``{z_i >= 0, sum z_i = z}`` is discretized in steps of
    ``z / grid``; the extremal compositions are found exactly on that grid
    by a min-plus (resp. max-plus) recursion over the marginals.
    """
    n = len(marginals)
    if not 2 <= n <= 6:
        raise DomainError("frechet_bounds supports 2 to 6 marginals")
    if grid < 64:
        raise ResolutionError("grid resolution must be at least 64 points per axis")
    if not z > 0:
        raise DomainError("z must be positive")
    zs = z * np.arange(grid + 1) / grid
    F = np.array([np.asarray(getattr(m, "cdf", m)(zs), dtype=float) for m in marginals])
    k = np.arange(grid + 1)
    diff = k[:, None] - k[None, :]          # row k, column j -> k - j
    valid = diff >= 0
    idx = np.where(valid, diff, 0)
    lo_best = F[0].copy()
    hi_best = F[0].copy()
    for Fi in F[1:]:
        lo_best = np.where(valid, lo_best[None, :] + Fi[idx], np.inf).min(axis=1)
        hi_best = np.where(valid, hi_best[None, :] + Fi[idx], -np.inf).max(axis=1)
    upper = min(float(lo_best[grid]), 1.0)
    lower = max(float(hi_best[grid]) - (n - 1), 0.0)
    return lower, upper


def mgf_service_iid(marginal: CapacityMarginal, n: int, theta: float,
                    tol: Tolerances = DEFAULT_TOL) -> float:
    """(E[e^(theta C)])^n with the per-slot expectation by quadrature.

    E[e^(theta C)] = 1 + theta int_0^upper e^(theta z) P(C > z) dz for C >= 0.
    """
    if theta == 0:
        return 1.0

    def f(z):
        with np.errstate(over="ignore", invalid="ignore"):
            return np.exp(theta * z) * marginal.ccdf(z)

    try:
        if math.isfinite(marginal.upper):
            integral = integrate(f, 0.0, marginal.upper, tol)
        else:
            integral = integrate_semi_infinite(f, tol)
    except NonConvergence as exc:
        raise Divergence(f"per-slot MGF diverges at theta={theta}") from exc
    per_slot = 1.0 + theta * integral
    if not math.isfinite(per_slot) or per_slot < 0:
        raise Divergence(f"per-slot MGF diverges at theta={theta}")
    return per_slot ** n


def gil_pelaez_cdf(char_fn: Callable[[np.ndarray], np.ndarray], x,
                   tol: Tolerances = Tolerances(rel_tol=1e-6, abs_tol=1e-6, max_iter=60)):
    """cdf from a characteristic function by Gil-Pelaez inversion.

    F(x) = 1/2 - (1/pi) int_0^inf Im[e^(-jtx) phi(t)] / t dt.  The frequency
    axis is covered in blocks of doubling length, each integrated
    adaptively; integration stops once two consecutive blocks contribute
    less than ``tol.abs_tol``.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    width = 2 * math.pi / (np.abs(xs).max() + 1.0)
    inner = Tolerances(rel_tol=tol.rel_tol, abs_tol=tol.abs_tol / 10, max_iter=200)

    def integrand(t):
        ph = np.asarray(char_fn(t), dtype=complex)
        return np.imag(np.exp(-1j * np.outer(xs, t)) * ph[None, :]) / t[None, :]

    total = np.zeros(xs.size)
    lo, hi = 0.0, width
    quiet = 0
    for _ in range(tol.max_iter):
        block = integrate(integrand, lo, hi, inner, initial=max(8, int((hi - lo) / width) + 1))
        total += block
        quiet = quiet + 1 if np.abs(block).max() < tol.abs_tol else 0
        if quiet >= 2:
            out = np.clip(0.5 - total / math.pi, 0.0, 1.0)
            return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))
        lo, hi = hi, 2 * hi
    raise NonConvergence("Gil-Pelaez tail did not settle")


def _log_weighted(g: Callable, k: float, z0: float, sign: float, tol: Tolerances) -> float:
    """int over v >= 0 of z^k g(z) with z = z0 e^(sign v)."""
    log_z0 = math.log(z0)

    def f(v):
        v = np.asarray(v, dtype=float)
        with np.errstate(over="ignore"):
            gz = np.asarray(g(z0 * np.exp(sign * v)), dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(gz > 0, np.exp(k * (log_z0 + sign * v) + np.log(np.where(gz > 0, gz, 1.0))), 0.0)

    if sign * k > 0:
        # the power weight grows along this side; g must beat it
        far = f(np.array([100.0, 300.0]))
        if not far[1] < far[0] or not np.all(np.isfinite(far)):
            if far[0] > 0 or far[1] > 0:
                raise Divergence("integrand does not decay")
        rate = 1.0
    else:
        rate = abs(k)
    return integrate_semi_infinite(f, tol, scale=1.0 / rate)


def mellin(cdf: Callable[[np.ndarray], np.ndarray], s: float,
           tol: Tolerances = DEFAULT_TOL, upper: float = math.inf) -> float:
    """E[X^(s-1)] for X >= 0 with cdf ``cdf``, by parts against the cdf.

    s < 1: (1 - s) int_0^inf z^(s-2) F(z) dz;  s > 1: (s - 1) int_0^upper
    z^(s-2) (1 - F(z)) dz.  Both integrals are taken in log coordinates,
    ``z = e^v``, where the power-law tails become exponential ones.
    """
    if s == 1:
        return 1.0
    if s < 1:
        def g(z):
            return np.asarray(cdf(z), dtype=float)
    else:
        def g(z):
            return 1.0 - np.asarray(cdf(z), dtype=float)
    k = s - 1.0
    # dz = z dv, so the integrand in v is z^(s-1) g(z)
    try:
        if s > 1 and math.isfinite(upper):
            val = _log_weighted(g, k, upper, -1.0, tol)
        else:
            val = _log_weighted(g, k, 1.0, -1.0, tol) + _log_weighted(g, k, 1.0, 1.0, tol)
    except NumericsError as exc:
        raise Divergence(f"Mellin transform diverges at s={s}") from exc
    if not math.isfinite(val):
        raise Divergence(f"Mellin transform diverges at s={s}")
    return abs(k) * val
