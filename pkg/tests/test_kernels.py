import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsep.kernels import (KernelTable, base_kernel, heat_kernel, heat_kernel_family, kernel_scaling_probe, phi,
                          phi_direct, tilted_kernel)
from hsep.model import ModelParams

DATA = Path(__file__).parent / "data"


def test_base_kernel_zero_mass_and_total():
    p = ModelParams(q=0.9, nu=0.5, alpha=1.0)
    k = base_kernel(0, p)
    assert k.weights[0] == pytest.approx(1 - 1.0 * (1 - 0.9) / 2, rel=1e-15)
    assert abs(k.total() + k.tail_mass_bound - 1) <= 1e-14
    assert np.all(k.weights >= 0)


def test_base_kernel_point_mass_as_q_to_one():
    k = base_kernel(0, ModelParams.scaling(1e-13))
    assert k.weights[0] == pytest.approx(1.0, abs=1e-12)
    assert k.total() - k.weights[0] < 1e-12


def test_base_kernel_golden_file():
    # weights from exact rational evaluation of the geometric law, frozen in the dump format
    gold = KernelTable.load((DATA / "base_kernel_q0.9_nu0.5_alpha1.txt").read_text())
    k = base_kernel(0, ModelParams(q=0.9, nu=0.5, alpha=1.0), length=len(gold.weights))
    np.testing.assert_allclose(k.weights, gold.weights, rtol=1e-15, atol=0)
    assert KernelTable.load(k.dump()).weights.tolist() == k.weights.tolist()


@settings(max_examples=100, deadline=None)
@given(eps=st.floats(0.02, 0.8), nu=st.floats(0.0, 0.9), alpha=st.floats(0.1, 5.0),
       J=st.integers(1, 4), rho=st.floats(0.1, 0.9), s=st.integers(0, 7))
def test_tilted_kernel_identities(eps, nu, alpha, J, rho, s):
    p = ModelParams.scaling(eps, nu=nu, alpha=alpha, J=J, rho=rho)
    k = tilted_kernel(s, p)
    c = p.constants
    assert np.all(k.weights >= 0)
    assert abs(k.total() - 1) <= 1e-12
    assert abs(k.mean()) <= 1e-10
    assert abs(k.variance() - c.r_star ** 2 * c.sigma_at(s)) <= 1e-10


def test_heat_kernel_trivial_spans():
    p = ModelParams.scaling(0.3, J=2)
    d = heat_kernel(5, 5, p)
    assert d.weights.tolist() == [1.0] and d.offset == 0.0
    one = heat_kernel(6, 5, p)
    np.testing.assert_array_equal(one.weights, tilted_kernel(5, p).weights)
    assert one.offset == pytest.approx(tilted_kernel(5, p).offset, abs=1e-15)
    with pytest.raises(ValueError):
        heat_kernel(3, 5, p)


def test_heat_kernel_semigroup():
    p = ModelParams.scaling(0.2, J=3)
    for t1, t2, t3 in ((0, 10, 32), (3, 4, 20), (1, 17, 33)):
        a = heat_kernel(t3, t2, p).convolve(heat_kernel(t2, t1, p))
        b = heat_kernel(t3, t1, p)
        n = min(len(a.weights), len(b.weights))
        assert np.max(np.abs(a.weights[:n] - b.weights[:n])) <= 1e-12
        assert a.offset == pytest.approx(b.offset, abs=1e-12)


def test_heat_kernel_variance_adds():
    p = ModelParams.scaling(0.2, J=2)
    c = p.constants
    k = heat_kernel(40, 3, p)
    assert k.mean() == pytest.approx(0.0, abs=1e-10)
    assert k.variance() == pytest.approx(sum(c.r_star ** 2 * c.sigma_at(s) for s in range(3, 40)), rel=1e-10)


def test_heat_kernel_family_rows():
    p = ModelParams.scaling(0.3)
    fam = heat_kernel_family(12, 4, p, 60)
    for s in (4, 8, 11, 12):
        np.testing.assert_allclose(fam[s], heat_kernel(12, s, p).prefix(60), atol=1e-15)


def test_phi_values_and_derivatives():
    p = ModelParams.scaling(0.2, J=2)
    c = p.constants
    for s in (0, 1):
        assert phi(1.0, s, p) == pytest.approx(1.0, abs=1e-14)
        h = 1e-4
        d1 = (phi(1 + h, s, p) - phi(1 - h, s, p)) / (2 * h)
        d2 = (phi(1 + h, s, p) - 2 * phi(1.0, s, p) + phi(1 - h, s, p)) / h ** 2
        assert abs(d1) < 1e-8
        assert d2 == pytest.approx(c.r_star ** 2 * c.sigma_at(s), abs=1e-6)


def test_phi_closed_form_matches_summation():
    p = ModelParams.scaling(0.3, nu=0.4, alpha=2.0, J=2, rho=0.6)
    xs = np.linspace(0.9, 1.1, 21)
    for s in (0, 1):
        np.testing.assert_allclose(phi(xs, s, p), phi_direct(xs, s, p), rtol=0, atol=1e-12)


def test_phi_domain_error():
    p = ModelParams.scaling(0.2)
    with pytest.raises(ValueError):
        phi(-1.0, 0, p)
    with pytest.raises(ValueError):
        phi(100.0, 0, p)


def test_kernel_probe_small():
    rep = kernel_scaling_probe(1.0, [0.4], ModelParams.scaling(0.4), t_max=512, n_points=7)
    row = rep["eps"][0.4]
    assert row["variance_rel_error"] < 1e-9
    assert row["expmoment_ok"]
    assert -0.7 < row["sup_exponent"] < -0.4
