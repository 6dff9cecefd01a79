import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import THREE, make_network, mc_sir
from qosnet.geometry import NetworkParams, realization_seed, sample_network
from qosnet.numerics import DomainError
from qosnet.service_dist import capacity_cap, capacity_marginal_from_network
from qosnet.effcap import (
    QosExponent,
    effcap_ccdf_markov,
    effcap_ccdf_nearest,
    effcap_mean_closed_form,
    effcap_samples,
    effective_capacity_conditional,
    empirical_ccdf,
    nearest_zeta,
    psi_integral,
)
from qosnet.snc_delay import service_mellin_exact


def test_qos_exponent():
    assert QosExponent(0.25, 2.0).thetaT == 0.5
    with pytest.raises(ValueError):
        QosExponent(0.0)


def test_effcap_limits(three_net, empty_net):
    mean = capacity_marginal_from_network(three_net).mean
    assert effective_capacity_conditional(three_net, 1e-7) == pytest.approx(mean, rel=1e-5)
    assert effective_capacity_conditional(empty_net, 0.5) == pytest.approx(capacity_cap(1))
    assert effective_capacity_conditional(empty_net, QosExponent(0.5), n_symbols=100) == pytest.approx(capacity_cap(100))


def test_effcap_matches_mc(three_net):
    x = (1 + mc_sir(three_net, 1_000_000, 20)) ** -0.5
    m, se = x.mean(), x.std(ddof=1) / math.sqrt(x.size)
    r = effective_capacity_conditional(three_net, QosExponent(0.5))
    # delta method: dR = dM / (thetaT M)
    assert abs(r - (-2 * math.log(m))) < 3 * 2 * se / m


def test_effcap_scaling(three_net):
    r1 = effective_capacity_conditional(three_net, 0.005 * 100)
    assert effective_capacity_conditional(three_net, 0.005, n_symbols=100) == pytest.approx(100 * r1, rel=1e-12)


@pytest.mark.parametrize("th", [0.1, 0.5, 1.0, 2.0])
def test_psi_equals_exact(three_net, th):
    assert psi_integral(three_net, th) == pytest.approx(service_mellin_exact(three_net, 1 - th), rel=1e-6)


def test_psi_limits(three_net_p1, empty_net):
    assert psi_integral(empty_net, 0.5) == 0.0
    assert psi_integral(three_net_p1, 1e-6) == pytest.approx(1.0, abs=1e-4)
    with pytest.raises(DomainError):
        psi_integral(three_net_p1, 0.0)


def test_psi_on_sampled_networks():
    for i in range(5):
        net = sample_network(NetworkParams(), realization_seed(30, i))
        for th in (0.1, 0.5, 1.0, 2.0):
            assert psi_integral(net, th) == pytest.approx(service_mellin_exact(net, 1 - th), rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.01, 20), b=st.floats(0.01, 20))
def test_effcap_nonincreasing(a, b):
    net = make_network(THREE)
    lo, hi = sorted((a, b))
    assert effective_capacity_conditional(net, hi) <= effective_capacity_conditional(net, lo) + 1e-9


def test_closed_form_limits():
    dense = NetworkParams(lam=1e4)
    assert effcap_mean_closed_form(dense, 0.5) < 1e-3
    sparse = [effcap_mean_closed_form(NetworkParams(lam=lam), 0.5) for lam in (1e-2, 1e-4, 1e-6)]
    assert sparse[0] < sparse[1] < sparse[2]
    with pytest.raises(DomainError):
        effcap_mean_closed_form(NetworkParams(), 0.0)


def test_closed_form_against_pgfl_oracle():
    # -(1/thetaT) log E[Psi] with E[P_s] from the PGFL, integrated independently with scipy
    from scipy import integrate as sp_integrate
    from qosnet.geometry import mean_success_probability

    params = NetworkParams()
    th = 0.5
    inner = sp_integrate.quad(lambda t: mean_success_probability(params, t ** (-1 / th) - 1), 0, 1, limit=200)[0]
    assert effcap_mean_closed_form(params, th) == pytest.approx(-math.log(1 - inner) / th, rel=1e-6)


def test_jensen_direction():
    params = NetworkParams()
    nets = [sample_network(params, realization_seed(31, i)) for i in range(300)]
    R = effcap_samples(nets, 0.5)
    se = R.std(ddof=1) / math.sqrt(R.size)
    assert effcap_mean_closed_form(params, 0.5) <= R.mean() + 3 * se


def test_markov():
    assert effcap_ccdf_markov(2.0, 4.0) == 0.5
    assert effcap_ccdf_markov(2.0, 1.0) == 1.0
    assert effcap_ccdf_markov(2.0, np.array([4.0, 8.0])) == pytest.approx([0.5, 0.25])
    with pytest.raises(ValueError):
        effcap_ccdf_markov(1.0, 0.0)
    nets = [sample_network(NetworkParams(), realization_seed(32, i)) for i in range(300)]
    R = effcap_samples(nets, 0.5)
    x = 2 * R.mean()
    emp = empirical_ccdf(R, x)
    assert emp <= effcap_ccdf_markov(R.mean(), x) + 3 * math.sqrt(0.25 / R.size)


def test_nearest_formula_shape():
    params = NetworkParams()
    assert nearest_zeta(0.5, 1e-12) == pytest.approx(0.0, abs=1e-11)
    assert effcap_ccdf_nearest(params, 0.5, 1e-12) == pytest.approx(1.0)
    plateau = math.exp(-math.pi * 0.09 * (math.sqrt(2) / 0.5) ** (4 / 3.5))
    assert effcap_ccdf_nearest(params, 0.5, 1e3) == pytest.approx(plateau, rel=1e-12)
    xs = np.linspace(0.1, 10, 50)
    assert np.all(np.diff(effcap_ccdf_nearest(params, 0.5, xs)) <= 0)


def test_nearest_formula_matches_event_probability():
    # the formula is P(M_u2(1 - thetaT) < e^(-x thetaT)) for the nearest interferer of a PPP
    from qosnet.snc_delay import nearest_u2_raw

    params = NetworkParams()
    th = 0.5
    d = np.sqrt(np.random.default_rng(1).exponential(size=200000) / math.pi)
    Z = (params.r / d) ** params.alpha
    for x in (0.5, 1.0, 2.0):
        u2 = 1 - th / np.sqrt((1 + 2 * th) * Z)
        emp = np.mean(u2 < math.exp(-x * th))
        se = math.sqrt(emp * (1 - emp) / d.size)
        assert abs(effcap_ccdf_nearest(params, th, x) - emp) < 3 * se + 1e-12
    assert nearest_u2_raw(1.0, 1 - th) == pytest.approx(1 - th / math.sqrt(1 + 2 * th))


def test_nearest_formula_bounds_ccdf_when_always_active():
    params = NetworkParams(p=1.0)
    nets = [sample_network(params, realization_seed(33, i)) for i in range(300)]
    R = effcap_samples(nets, 0.5)
    for x in (0.5, 1.0, 2.0):
        emp = empirical_ccdf(R, x)
        assert emp <= effcap_ccdf_nearest(params, 0.5, x) + 3 * math.sqrt(0.25 / R.size)


def test_empirical_ccdf():
    assert empirical_ccdf([1, 2, 3, 4], 2.5) == 0.5
    assert empirical_ccdf([1, 2, 3, 4], [0, 4]) == pytest.approx([1.0, 0.0])
