"""Poisson bipolar network realizations, SIR and conditional success probability.

The typical transmitter sits at the origin and its receiver at distance ``r``
in a random direction.  Interferer distances are always measured from the
receiver.  Distances are in km and densities in nodes per km^2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import beta_fn

INF_SIR = math.inf


@dataclass(frozen=True)
class NetworkParams:
    lam: float = 1.0
    alpha: float = 3.5
    p: float = 0.5
    r: float = 0.3
    window_radius: float | None = None

    def __post_init__(self) -> None:
        errors = []
        if not self.lam > 0:
            errors.append("lam must be > 0")
        if not self.alpha > 2:
            errors.append("alpha must be > 2")
        if not 0 <= self.p <= 1:
            errors.append("p must lie in [0, 1]")
        if not self.r > 0:
            errors.append("r must be > 0")
        if errors:
            raise ValueError("; ".join(errors))
        min_window = self.min_window_radius
        if self.window_radius is None:
            object.__setattr__(self, "window_radius", min_window)
        elif self.window_radius < min_window * (1 - 1e-12):
            raise ValueError(
                f"window_radius {self.window_radius} below 10*max(r, 1/sqrt(lam)) = {min_window}")

    @property
    def min_window_radius(self) -> float:
        return 10.0 * max(self.r, 1.0 / math.sqrt(self.lam))

    def truncation_deficit(self, xi: float = 1.0) -> float:
        """PGFL exponent lost by ignoring interferers outside the window.

        ``lam * p * integral_{|x|>R} xi r^a |x|^-a / (1 + xi r^a |x|^-a) dx``,
        bounded above by ``2 pi lam p xi r^a R^(2-a) / (a - 2)``.
        """
        R = self.window_radius
        return (2 * math.pi * self.lam * self.p * xi * self.r ** self.alpha
                * R ** (2 - self.alpha) / (self.alpha - 2))

    def to_dict(self) -> dict:
        return {"lam": self.lam, "alpha": self.alpha, "p": self.p, "r": self.r,
                "window_radius": self.window_radius}


@dataclass(frozen=True)
class BipolarNetwork:
    """One spatial realization: the points of Phi minus the origin, plus R_o."""

    params: NetworkParams
    interferers: np.ndarray
    receiver: np.ndarray
    _gains: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        pts = np.asarray(self.interferers, dtype=float).reshape(-1, 2)
        rx = np.asarray(self.receiver, dtype=float).reshape(2)
        if not math.isclose(float(np.hypot(*rx)), self.params.r, rel_tol=1e-9):
            raise ValueError("receiver must lie at distance r from the origin")
        if pts.size and np.hypot(pts[:, 0], pts[:, 1]).max() > self.params.window_radius * (1 + 1e-12):
            raise ValueError("interferer outside the simulation window")
        pts.setflags(write=False)
        rx.setflags(write=False)
        object.__setattr__(self, "interferers", pts)
        object.__setattr__(self, "receiver", rx)
        gains = (self.params.r / self.distances) ** self.params.alpha
        gains.setflags(write=False)
        object.__setattr__(self, "_gains", gains)

    @property
    def n_interferers(self) -> int:
        return self.interferers.shape[0]

    @property
    def distances(self) -> np.ndarray:
        """Interferer distances ||x - R_o||."""
        d = self.interferers - self.receiver[None, :]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def gains(self) -> np.ndarray:
        """Normalized interference gains r^alpha ||x - R_o||^-alpha."""
        return self._gains

    def nearest_distance(self) -> float:
        return float(self.distances.min()) if self.n_interferers else math.inf

    def nearest_ratio(self) -> float:
        """Z = r^alpha ||x_min - R_o||^-alpha (0 for an empty network)."""
        return float(self._gains.max()) if self.n_interferers else 0.0

    def with_params(self, params: NetworkParams) -> "BipolarNetwork":
        """Same point pattern under different access probability or exponent."""
        if not math.isclose(params.r, self.params.r):
            raise ValueError("changing r moves the receiver; resample instead")
        return BipolarNetwork(params, self.interferers, self.receiver)

    def to_json(self) -> str:
        return json.dumps({
            "params": self.params.to_dict(),
            "receiver": self.receiver.tolist(),
            "interferers": self.interferers.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "BipolarNetwork":
        obj = json.loads(text)
        return cls(NetworkParams(**obj["params"]),
                   np.asarray(obj["interferers"], dtype=float).reshape(-1, 2),
                   np.asarray(obj["receiver"], dtype=float))


@dataclass(frozen=True)
class SlotDraw:
    """Fading gains (index 0 is the typical link) and interferer activity."""

    fading: np.ndarray
    active: np.ndarray

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.fading) < 0):
            raise ValueError("fading gains must be nonnegative")
        if np.asarray(self.fading).shape[-1] != np.asarray(self.active).shape[-1] + 1:
            raise ValueError("fading needs one more entry than active (the typical link)")


def sample_network(params: NetworkParams, seed) -> BipolarNetwork:
    """Draw a PPP on the window disk and a receiver in a uniform direction.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.  The
    points are drawn before the receiver angle, so two calls that differ
    only in ``r`` share the point pattern and the direction.
    """
    rng = np.random.default_rng(seed)
    R = params.window_radius
    n = rng.poisson(params.lam * math.pi * R * R)
    rad = R * np.sqrt(rng.random(n))
    ang = 2 * math.pi * rng.random(n)
    pts = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    phi = 2 * math.pi * rng.random()
    rx = params.r * np.array([math.cos(phi), math.sin(phi)])
    return BipolarNetwork(params, pts, rx)


def draw_slot(network: BipolarNetwork, rng: np.random.Generator) -> SlotDraw:
    n = network.n_interferers
    return SlotDraw(rng.standard_exponential(n + 1), rng.random(n) < network.params.p)


def sir(network: BipolarNetwork, draw: SlotDraw):
    """SIR of the typical link; ``INF_SIR`` when no interferer is active.

    Vectorized over leading axes of ``draw`` (one row per slot).
    """
    fading = np.asarray(draw.fading, dtype=float)
    active = np.asarray(draw.active, dtype=bool)
    # gains are r^a d^-a, so signal h_o r^-a over sum h_y d^-a equals h_o / sum h_y gain
    interference = (fading[..., 1:] * active) @ network.gains
    with np.errstate(divide="ignore"):
        out = fading[..., 0] / interference
    if np.ndim(out) == 0:
        return float(out) if interference > 0 else INF_SIR
    return np.where(interference > 0, out, INF_SIR)


def _log_success(gains: np.ndarray, p: float, xi: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        q = xi[:, None] * gains[None, :]
        # log(p / (1 + q) + 1 - p) = log1p((1-p) q) - log1p(q), exact for p = 1
        terms = np.log1p((1.0 - p) * q) - np.log1p(q)
    if np.isinf(q).any():
        limit = math.log1p(-p) if p < 1 else -math.inf
        terms = np.where(np.isinf(q), limit, terms)
    return terms.sum(axis=1)


def conditional_success_probability(network: BipolarNetwork, xi):
    """P(SIR > xi | Phi) = prod_x (p / (1 + xi r^a ||x - R_o||^-a) + 1 - p)."""
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    if np.any(xi_arr < 0):
        raise ValueError("xi must be nonnegative")
    out = np.exp(_log_success(network.gains, network.params.p, xi_arr))
    return float(out[0]) if np.ndim(xi) == 0 else out.reshape(np.shape(xi))


def conditional_outage_probability(network: BipolarNetwork, xi):
    """1 - P_s(xi), computed without cancellation for small xi."""
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    out = -np.expm1(_log_success(network.gains, network.params.p, xi_arr))
    return float(out[0]) if np.ndim(xi) == 0 else out.reshape(np.shape(xi))


def pgfl_constant(alpha: float) -> float:
    """C(alpha) = (2/alpha) B(1 - 2/alpha, 2/alpha)."""
    delta = 2.0 / alpha
    return delta * beta_fn(1.0 - delta, delta)


def mean_success_probability(params: NetworkParams, xi):
    """Spatial average exp(-lam pi p r^2 C(alpha) xi^(2/alpha)) on the infinite plane."""
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(xi_arr < 0):
        raise ValueError("xi must be nonnegative")
    k = params.lam * math.pi * params.p * params.r ** 2 * pgfl_constant(params.alpha)
    out = np.exp(-k * xi_arr ** (2.0 / params.alpha))
    return float(out) if out.ndim == 0 else out


def realization_seed(master_seed: int, index: int, stream: int = 0) -> np.random.SeedSequence:
    """Per-realization seed, independent of worker scheduling."""
    return np.random.SeedSequence([int(master_seed), int(index), int(stream)])


def nearest_distances(networks: Sequence[BipolarNetwork]) -> np.ndarray:
    return np.array([net.nearest_distance() for net in networks])
