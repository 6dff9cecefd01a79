"""Numerical kernels shared by the analytical modules.

Everything here is a pure function of its arguments.  Integrands are called
with numpy arrays of abscissae and must return an array of the same length
(or a ``(k, m)`` array when several integrals share their nodes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class NumericsError(ArithmeticError):
    """Base class for numerical failures (CLI exit code 4)."""


class NonConvergence(NumericsError):
    pass


class Divergence(NumericsError):
    pass


class DomainError(NumericsError, ValueError):
    pass


class BracketError(NumericsError, ValueError):
    pass


@dataclass(frozen=True)
class Tolerances:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self) -> None:
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")


DEFAULT_TOL = Tolerances()

# Gauss-Kronrod 7/15 rule on [-1, 1]
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_WK15 = np.concatenate([_WGK[:-1], _WGK[::-1]])
_WG7 = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod nodes (x[1], x[3], x[5], 0)
for _i, _w in zip((1, 3, 5), _WG[:3]):
    _WG7[_i] = _w
    _WG7[14 - _i] = _w
_WG7[7] = _WG[3]
_EPS = np.finfo(float).eps


def _gk15(f, lo: np.ndarray, hi: np.ndarray):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = (mid[:, None] + half[:, None] * _NODES[None, :]).ravel()
    fx = np.asarray(f(x), dtype=float)
    vector = fx.ndim == 2
    if not vector:
        fx = fx[None, :]
    fx = fx.reshape(fx.shape[0], lo.size, 15)
    if not np.all(np.isfinite(fx)):
        raise NonConvergence("integrand returned a non-finite value")
    k15 = fx @ _WK15 * half
    g7 = fx @ _WG7 * half
    mean = k15 / np.where(half == 0, 1.0, 2 * half)
    resasc = np.abs(fx - mean[..., None]) @ _WK15 * half
    resabs = np.abs(fx) @ _WK15 * half
    diff = np.abs(k15 - g7)
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.where(resasc > 0,
                       resasc * np.minimum(1.0, (200.0 * diff / resasc) ** 1.5),
                       diff)
    err = np.maximum(err, 50 * _EPS * resabs)
    return k15, err, vector


def integrate(f: Callable, a: float, b: float, tol: Tolerances = DEFAULT_TOL,
              initial: int = 8):
    """Globally adaptive Gauss-Kronrod quadrature of ``f`` over ``[a, b]``.

    ``f`` may return shape ``(m,)`` or ``(k, m)``; in the latter case ``k``
    integrals are refined on a common set of intervals and an array is
    returned.
    """
    if not (math.isfinite(a) and math.isfinite(b)):
        raise DomainError("integrate needs finite limits; use integrate_semi_infinite")
    if a == b:
        probe = np.asarray(f(np.array([a])), dtype=float)
        return 0.0 if probe.ndim == 1 else np.zeros(probe.shape[0])
    edges = np.linspace(a, b, initial + 1)
    lo, hi = edges[:-1], edges[1:]
    val, err, vector = _gk15(f, lo, hi)
    for _ in range(tol.max_iter):
        total = val.sum(axis=1)
        target = np.maximum(tol.abs_tol, tol.rel_tol * np.abs(total))
        if np.all(err.sum(axis=1) <= target):
            return total if vector else float(total[0])
        score = (err / target[:, None]).max(axis=0)
        order = np.argsort(score)[::-1]
        remaining = score.sum() - np.cumsum(score[order])
        n_split = int(np.searchsorted(-remaining, -0.5)) + 1
        split = order[:n_split]
        keep = np.setdiff1d(np.arange(lo.size), split, assume_unique=True)
        mid = 0.5 * (lo[split] + hi[split])
        if np.any((mid <= lo[split]) | (mid >= hi[split])):
            break
        new_lo = np.concatenate([lo[split], mid])
        new_hi = np.concatenate([mid, hi[split]])
        new_val, new_err, _ = _gk15(f, new_lo, new_hi)
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        val = np.concatenate([val[:, keep], new_val], axis=1)
        err = np.concatenate([err[:, keep], new_err], axis=1)
    raise NonConvergence(
        f"quadrature on [{a}, {b}] missed tolerance after {tol.max_iter} refinements "
        f"(error estimate {err.sum(axis=1).max():.3g})")


def integrate_semi_infinite(f: Callable, tol: Tolerances = DEFAULT_TOL,
                            scale: float = 1.0):
    """Integrate ``f`` over ``[0, inf)`` via ``y = scale * u / (1 - u)``.

    ``scale`` should be the length scale over which ``f`` decays; the
    default suits integrands that fall off on an O(1) scale.
    """
    if not scale > 0:
        raise DomainError("scale must be positive")

    def mapped(u):
        one_minus = 1.0 - u
        inside = one_minus > 0
        safe = np.where(inside, one_minus, 1.0)
        fy = np.asarray(f(scale * u / safe), dtype=float)
        # nodes that round onto u = 1 carry the (vanishing) value at infinity
        return np.where(inside, fy * (scale / safe ** 2), 0.0)

    return integrate(mapped, 0.0, 1.0, tol)


def _hyp_series(a: float, b: float, c: float, x: float, max_terms: int) -> float:
    term = 1.0
    total = 1.0
    small = 0
    for k in range(max_terms):
        term *= (a + k) * (b + k) / ((c + k) * (k + 1)) * x
        total += term
        if term == 0.0:
            return total
        if abs(term) <= _EPS * abs(total):
            small += 1
            if small >= 2:
                return total
        else:
            small = 0
    raise NonConvergence(f"2F1 series at x={x} did not converge in {max_terms} terms")


def gauss_2f1(a: float, b: float, c: float, x: float, max_terms: int = 4000) -> float:
    """Gauss hypergeometric function on the real branch ``x < 1``.

    Negative arguments are mapped into ``(0, 1)`` with the Pfaff
    transformation ``(1-x)^-a 2F1(a, c-b; c; x/(x-1))``.  Arguments close to
    1 converge slowly and may raise :class:`NonConvergence`; callers that
    need that region fall back to quadrature.
    """
    if c <= 0 and float(c).is_integer():
        raise DomainError("c must not be a nonpositive integer")
    if x >= 1:
        raise DomainError("gauss_2f1 is implemented for x < 1 only")
    if x == 0:
        return 1.0
    if x < 0:
        return (1.0 - x) ** (-a) * _hyp_series(a, c - b, c, x / (x - 1.0), max_terms)
    return _hyp_series(a, b, c, x, max_terms)


def std_normal_cdf(x):
    """Standard normal cdf (lower tail), scalar or array."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / math.sqrt(2.0))
    return 0.5 * np.vectorize(math.erfc, otypes=[float])(-np.asarray(x, float) / math.sqrt(2.0))


def beta_fn(a: float, b: float) -> float:
    if a <= 0 or b <= 0:
        raise DomainError("beta function needs positive arguments")
    return math.exp(math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))


_GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))


def minimize_scalar(f: Callable[[float], float], bracket: tuple[float, float],
                    tol: Tolerances = DEFAULT_TOL) -> tuple[float, float]:
    """Brent's method (golden section with parabolic steps) on ``[lo, hi]``.

    Returns ``(argmin, min)``.  Only a local minimum is guaranteed, so
    callers bracket the global one with a coarse scan first.
    """
    lo, hi = map(float, bracket)
    if not lo < hi:
        raise BracketError("bracket must satisfy lo < hi")
    rel = max(tol.rel_tol, math.sqrt(_EPS))
    a, b = lo, hi
    x = w = v = a + _GOLDEN * (b - a)
    fx = fw = fv = f(x)
    d = e = 0.0
    for _ in range(tol.max_iter):
        m = 0.5 * (a + b)
        tol1 = rel * abs(x) + tol.abs_tol
        tol2 = 2.0 * tol1
        if abs(x - m) <= tol2 - 0.5 * (b - a):
            return x, fx
        parabolic = False
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0:
                p = -p
            q = abs(q)
            if abs(p) < abs(0.5 * q * e) and a * q < p + q * x - q * a and p < q * (b - x):
                e, d = d, p / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = tol1 if x < m else -tol1
                parabolic = True
        if not parabolic:
            e = (b - x) if x < m else (a - x)
            d = _GOLDEN * e
        u = x + (d if abs(d) >= tol1 else (tol1 if d > 0 else -tol1))
        fu = f(u)
        if fu <= fx:
            if u < x:
                b = x
            else:
                a = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    raise NonConvergence(f"minimize_scalar did not converge in {tol.max_iter} iterations")


def grid_bracket(values: Sequence[float], grid: Sequence[float]) -> tuple[int, tuple[float, float]]:
    """Index of the smallest finite value on a scan grid and its two neighbours.

    Neighbours are returned even when their value is infinite: the minimum
    can sit between the best grid point and an infeasible one.
    """
    vals = np.asarray(values, dtype=float)
    finite = np.isfinite(vals)
    if not finite.any():
        raise BracketError("no finite value on the scan grid")
    i = int(np.argmin(np.where(finite, vals, np.inf)))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    return i, (float(lo), float(hi))


def invert_monotone(g: Callable[[float], float], target: float,
                    bracket: tuple[float, float], tol: Tolerances = DEFAULT_TOL) -> float:
    """Solve ``g(d) = target`` for monotone ``g`` by bisection."""
    lo, hi = map(float, bracket)
    g_lo, g_hi = g(lo), g(hi)
    if not min(g_lo, g_hi) <= target <= max(g_lo, g_hi):
        raise BracketError(
            f"target {target} outside [{min(g_lo, g_hi)}, {max(g_lo, g_hi)}]")
    increasing = g_hi >= g_lo
    for _ in range(tol.max_iter):
        mid = 0.5 * (lo + hi)
        g_mid = g(mid)
        if g_mid == target:
            return mid
        if (g_mid < target) == increasing:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol.abs_tol + tol.rel_tol * abs(mid):
            return 0.5 * (lo + hi)
    raise NonConvergence(f"bisection did not converge in {tol.max_iter} steps")
