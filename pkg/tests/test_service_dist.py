import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import THREE, make_network, mc_sir
from qosnet.geometry import INF_SIR, conditional_success_probability
from qosnet.numerics import Divergence, DomainError
from qosnet.service_dist import (
    SIR_CAP,
    CapacityMarginal,
    ResolutionError,
    capacity_cap,
    capacity_char_fn,
    capacity_marginal_from_network,
    clt_service_cdf,
    frechet_bounds,
    gil_pelaez_cdf,
    instantaneous_capacity,
    mellin,
    mgf_service_iid,
)


def uniform01(z):
    return np.clip(np.asarray(z, dtype=float), 0.0, 1.0)


def expo_cdf(z):
    z = np.asarray(z, dtype=float)
    return np.where(z > 0, -np.expm1(-np.maximum(z, 0)), 0.0)


def test_instantaneous_capacity():
    assert instantaneous_capacity(math.e - 1, 100) == pytest.approx(100.0)
    assert instantaneous_capacity(0.0, 100) == 0.0
    assert instantaneous_capacity(3.0, 1) == pytest.approx(math.log(4))
    assert instantaneous_capacity(INF_SIR, 100) == pytest.approx(capacity_cap(100))
    assert capacity_cap(1) == pytest.approx(math.log1p(SIR_CAP))
    with pytest.raises(ValueError):
        instantaneous_capacity(-1.0)


def test_marginal_from_network(three_net):
    m = capacity_marginal_from_network(three_net)
    assert m.cdf(1e-12) == pytest.approx(0.0, abs=1e-9)
    assert m.cdf(1.0) == pytest.approx(1 - conditional_success_probability(three_net, math.e - 1), rel=1e-12)
    zs = np.linspace(0, 30, 200)
    assert np.all(np.diff(m.cdf(zs)) >= -1e-15)
    c = instantaneous_capacity(mc_sir(three_net, 200000, 2))
    assert abs(c.mean() - m.mean) < 3 * c.std() / math.sqrt(c.size)
    assert m.variance == pytest.approx(c.var(), rel=0.03)
    quiet = capacity_marginal_from_network(make_network(THREE, p=0.0))
    assert np.all(quiet.cdf(np.array([0.1, 5.0, 27.0])) == 0.0)
    assert quiet.mean == pytest.approx(capacity_cap(1), rel=1e-9)


def test_clt_examples():
    m = CapacityMarginal(cdf=expo_cdf, mean=1.0, variance=1.0)
    assert clt_service_cdf(m, 10, 10.0) == pytest.approx(0.5)
    assert clt_service_cdf(m, 4, 6.0) == pytest.approx(stats.norm.cdf(1.0))
    point = CapacityMarginal(cdf=lambda z: (np.asarray(z) >= 2).astype(float), mean=2.0, variance=0.0)
    assert clt_service_cdf(point, 3, 6.0) == 0.5
    with pytest.raises(DomainError):
        clt_service_cdf(point, 3, 5.0)
    tiny = CapacityMarginal(cdf=expo_cdf, mean=1.0, variance=1e-30)
    assert clt_service_cdf(tiny, 3, 2.9) == pytest.approx(0.0, abs=1e-12)


def _ks(samples, cdf_vals):
    s = np.sort(samples)
    n = s.size
    ecdf_hi = np.arange(1, n + 1) / n
    ecdf_lo = np.arange(0, n) / n
    return max(np.max(np.abs(ecdf_hi - cdf_vals)), np.max(np.abs(ecdf_lo - cdf_vals)))


def test_clt_against_mc(three_net):
    m = capacity_marginal_from_network(three_net)
    c = instantaneous_capacity(mc_sir(three_net, 400 * 2000, 3)).reshape(2000, 400).sum(axis=1)
    assert _ks(c, clt_service_cdf(m, 400, np.sort(c))) < 0.05


def test_frechet_examples():
    assert frechet_bounds([uniform01, uniform01], 1.0) == pytest.approx((0.0, 1.0))
    lo, hi = frechet_bounds([uniform01, uniform01], 1.5)
    assert lo == pytest.approx(0.5) and hi == 1.0
    shifted = lambda z: uniform01(np.asarray(z) - 1.0)
    assert frechet_bounds([shifted, shifted, shifted], 0.9) == (0.0, 0.0)


def test_frechet_errors():
    with pytest.raises(DomainError):
        frechet_bounds([uniform01], 1.0)
    with pytest.raises(DomainError):
        frechet_bounds([uniform01] * 7, 1.0)
    with pytest.raises(DomainError):
        frechet_bounds([uniform01] * 2, 0.0)
    with pytest.raises(ResolutionError):
        frechet_bounds([uniform01] * 2, 1.0, grid=32)


def _brute_frechet(cdfs, z, grid):
    # exhaustive enumeration of the simplex grid
    import itertools
    k = len(cdfs)
    best_lo, best_hi = -np.inf, np.inf
    for parts in itertools.product(range(grid + 1), repeat=k - 1):
        rest = grid - sum(parts)
        if rest < 0:
            continue
        comp = list(parts) + [rest]
        s = sum(float(f(z * c / grid)) for f, c in zip(cdfs, comp))
        best_lo, best_hi = max(best_lo, s), min(best_hi, s)
    return max(best_lo - (k - 1), 0.0), min(best_hi, 1.0)


def test_frechet_matches_exhaustive_search(three_net):
    m = capacity_marginal_from_network(three_net)
    cdfs = [m.cdf, expo_cdf, uniform01]
    for z in (0.5, 2.0, 4.0):
        assert frechet_bounds(cdfs, z, grid=64) == pytest.approx(_brute_frechet(cdfs, z, 64), abs=1e-12)


def test_frechet_comonotone_sum(three_net):
    m = capacity_marginal_from_network(three_net)
    c = instantaneous_capacity(mc_sir(three_net, 50000, 4))
    for n in (2, 4, 6):
        total = n * c   # fully correlated fading: the same capacity in every slot
        for z in (1.0, 3.0, 6.0, 12.0):
            lo, hi = frechet_bounds([m.cdf] * n, z)
            emp = np.mean(total <= z)
            se = math.sqrt(max(emp * (1 - emp), 1e-4) / total.size)
            assert lo - 3 * se <= emp <= hi + 3 * se


def test_mgf_examples():
    expo = CapacityMarginal(cdf=expo_cdf, mean=1.0, variance=1.0)
    assert mgf_service_iid(expo, 5, 0.0) == 1.0
    assert mgf_service_iid(expo, 2, -1.0) == pytest.approx(0.25, rel=1e-8)
    point = CapacityMarginal(cdf=lambda z: (np.asarray(z) >= 1.5).astype(float), mean=1.5, variance=0.0, upper=1.5)
    assert mgf_service_iid(point, 3, 0.4) == pytest.approx(math.exp(3 * 0.4 * 1.5), rel=1e-8)
    with pytest.raises(Divergence):
        mgf_service_iid(expo, 1, 2.0)


def test_gil_pelaez_examples():
    assert gil_pelaez_cdf(lambda t: 1 / (1 - 1j * t), 1.0) == pytest.approx(1 - math.exp(-1), abs=1e-5)
    assert gil_pelaez_cdf(lambda t: np.exp(-0.5 * t * t), 1.0) == pytest.approx(0.84134, abs=1e-5)
    assert gil_pelaez_cdf(lambda t: np.sinc(np.asarray(t) / np.pi), 0.0) == pytest.approx(0.5, abs=1e-6)


def test_char_fn_against_mc(three_net):
    phi = capacity_char_fn(three_net)
    assert abs(phi(0.0) - 1) < 1e-12
    c = instantaneous_capacity(mc_sir(three_net, 200000, 5))
    for t in (0.3, 1.0, 4.0):
        emp = np.mean(np.exp(1j * t * c))
        assert abs(phi(t) - emp) < 4 / math.sqrt(c.size)


def test_gil_pelaez_iid_sum(three_net):
    phi = capacity_char_fn(three_net)
    n = 4
    sums = instantaneous_capacity(mc_sir(three_net, 20000 * n, 6)).reshape(-1, n).sum(axis=1)
    xs = np.quantile(sums, np.linspace(0.02, 0.98, 25))
    from qosnet.numerics import Tolerances
    gp = gil_pelaez_cdf(lambda t: phi(t) ** n, xs, Tolerances(1e-6, 1e-4, 60))
    emp = np.searchsorted(np.sort(sums), xs, side="right") / sums.size
    assert np.max(np.abs(gp - emp)) < 0.03


def test_mellin_examples():
    point = lambda z: (np.asarray(z) >= 2.0).astype(float)
    for s in (0.3, 2.5):
        assert mellin(point, s, upper=2.0) == pytest.approx(2.0 ** (s - 1), rel=1e-7)
    assert mellin(uniform01, 1.0) == 1.0
    assert mellin(uniform01, 3.0, upper=1.0) == pytest.approx(1 / 3, rel=1e-9)
    # E[U^-1.5] is infinite for U uniform on [0, 1]
    with pytest.raises(Divergence):
        mellin(uniform01, -0.5)
    assert mellin(uniform01, 0.5) == pytest.approx(2.0, rel=1e-8)


def test_mellin_matches_exact_service(three_net):
    from qosnet.geometry import conditional_outage_probability
    from qosnet.snc_delay import service_mellin_exact

    cdf = lambda x: np.where(np.asarray(x) > 1, conditional_outage_probability(three_net, np.maximum(np.asarray(x) - 1, 0)), 0.0)
    assert mellin(cdf, 0.5) == pytest.approx(service_mellin_exact(three_net, 0.5), rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(s=st.floats(-3, 0.8), h=st.floats(0.05, 0.5))
def test_mellin_log_convex(s, h):
    cdf = lambda z: expo_cdf(np.asarray(z) - 0.5)
    vals = [math.log(mellin(cdf, x)) for x in (s - h, s, s + h)]
    assert vals[1] <= 0.5 * (vals[0] + vals[2]) + 1e-7
