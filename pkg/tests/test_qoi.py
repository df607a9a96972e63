import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import waveguide_s11_db
from yieldopt.errors import ConfigurationError, DomainError
from yieldopt.qoi import (
    ConstantModel,
    DesignPoint,
    PerformanceSpec,
    RangeGrid,
    WaveguideConfig,
    WaveguideModel,
    classify,
    halfspace_oracle,
    is_in_safe_domain,
)

OMEGA_7GHZ = 2 * np.pi * 7e9
# mpmath ABCD-cascade value, frozen: p=[9,5], d=[1,1], chi_m=0.1, 7 GHz
FROZEN_S11_DB = -6.441469325452008


def test_waveguide_matches_frozen_reference():
    m = WaveguideModel(WaveguideConfig(chi_m=0.1))
    assert m.evaluate([9.0, 5.0], [1.0, 1.0], OMEGA_7GHZ) == pytest.approx(FROZEN_S11_DB, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(
    p1=st.floats(0.5, 20.0),
    p2=st.floats(0.0, 10.0),
    d1=st.floats(0.1, 2.0),
    d2=st.floats(0.1, 2.0),
    f_ghz=st.floats(6.0, 8.0),
)
def test_waveguide_agrees_with_abcd_cascade(p1, p2, d1, d2, f_ghz):
    omega = 2 * np.pi * f_ghz * 1e9
    cfg = WaveguideConfig(chi_e=1.0, chi_m=1.9)
    got = WaveguideModel(cfg).evaluate([p1, p2], [d1, d2], omega)
    ref = float(waveguide_s11_db(p1, p2, d1, d2, omega, chi_m=1.9))
    if ref > -80:  # deep nulls are dominated by rounding
        assert got == pytest.approx(ref, abs=1e-8)


def test_offset_length_only_shifts_phase():
    m = WaveguideModel()
    r = RangeGrid.angular_ghz(6.5, 7.5, 11).points
    q = m.evaluate_batch([[9.0, 0.0], [9.0, 3.0], [9.0, 7.5]], [1.0, 1.0], r)
    np.testing.assert_allclose(q[1], q[0], atol=1e-9)
    np.testing.assert_allclose(q[2], q[0], atol=1e-9)


def test_empty_inlay_hits_db_floor():
    m = WaveguideModel()
    assert m.evaluate([9.0, 5.0], [0.0, 0.0], OMEGA_7GHZ) == pytest.approx(-100.0)
    assert m.evaluate([0.0, 5.0], [1.0, 1.0], OMEGA_7GHZ) == pytest.approx(-100.0)


def test_half_wavelength_inlay_is_reflectionless():
    cfg = WaveguideConfig()
    eps, mu = 1 + cfg.chi_e, 1 + cfg.chi_m
    k0 = OMEGA_7GHZ / 299_792_458.0
    kc = np.pi / 0.03
    beta1 = np.sqrt(eps * mu * k0**2 - kc**2)
    p1_mm = np.pi / beta1 * 1e3
    q = WaveguideModel(cfg).evaluate([p1_mm, 4.0], [1.0, 1.0], OMEGA_7GHZ)
    assert q < -90.0


def test_waveguide_domain_errors():
    m = WaveguideModel()
    with pytest.raises(DomainError, match="evanescent"):
        m.evaluate([9.0, 5.0], [1.0, 1.0], 2 * np.pi * 1e9)
    with pytest.raises(DomainError, match="nonnegative"):
        m.evaluate([-1.0, 5.0], [1.0, 1.0], OMEGA_7GHZ)
    with pytest.raises(DomainError, match="nonphysical"):
        m.evaluate([9.0, 5.0], [-2.0, 1.0], OMEGA_7GHZ)


def test_evaluation_counter_counts_sample_range_pairs():
    m = WaveguideModel()
    grid = RangeGrid.angular_ghz(6.5, 7.5, 11)
    m.evaluate_batch(np.full((7, 2), [9.0, 5.0]), [1, 1], grid.points)
    assert m.evaluations == 77
    m.reset_counter()
    assert m.evaluations == 0


def test_counter_is_thread_safe():
    m = ConstantModel(0.0)

    def work():
        for _ in range(200):
            m.evaluate_batch(np.zeros((3, 1)), [], [0.0, 1.0])

    threads = [threading.Thread(target=work) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert m.evaluations == 4 * 200 * 6


def test_dimension_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        WaveguideModel().evaluate_batch([[1.0, 2.0, 3.0]], [1, 1], [OMEGA_7GHZ])
    with pytest.raises(ConfigurationError):
        WaveguideModel().evaluate_batch([[1.0, 2.0]], [1], [OMEGA_7GHZ])


def test_range_grid_validation():
    g = RangeGrid.angular_ghz(6.5, 7.5, 11)
    assert len(g) == 11
    assert g.points[0] == pytest.approx(2 * np.pi * 6.5e9)
    assert g.points[-1] == pytest.approx(2 * np.pi * 7.5e9)
    with pytest.raises(ConfigurationError):
        RangeGrid([1.0, 1.0])


def test_classification_boundary_is_inclusive():
    spec = PerformanceSpec(2.0, RangeGrid([0.0, 1.0]))
    ok, margins = classify(ConstantModel(2.0), spec, np.zeros((3, 1)), [])
    assert ok.all() and np.all(margins == 0)
    inside, _ = is_in_safe_domain(ConstantModel(2.0 + 1e-12), spec, [0.0], [])
    assert not inside


def test_design_point_vector_roundtrip():
    p = DesignPoint([9.0, 5.0], [1.0, 1.5])
    q = DesignPoint.from_vector(p.as_vector(), 2)
    np.testing.assert_array_equal(q.uncertain_mean, p.uncertain_mean)
    np.testing.assert_array_equal(q.deterministic, p.deterministic)


def test_halfspace_oracle_derivatives_are_consistent():
    o = halfspace_oracle([0.6, 0.8], 0.3, shift=[1.0])
    cov = np.array([[1.0, 0.2], [0.2, 0.5]])
    mean, d = np.array([0.1, -0.2]), np.array([0.25])
    h = 1e-5
    g_num = np.array([
        (o.yield_value(mean + h * e, cov, d) - o.yield_value(mean - h * e, cov, d)) / (2 * h)
        for e in np.eye(2)
    ])
    np.testing.assert_allclose(o.grad_mean(mean, cov, d), g_num, atol=1e-9)
    H_num = np.array([
        (o.grad_mean(mean + h * e, cov, d) - o.grad_mean(mean - h * e, cov, d)) / (2 * h)
        for e in np.eye(2)
    ])
    np.testing.assert_allclose(o.hess_mean(mean, cov, d), H_num, atol=1e-8)
    gd = (o.yield_value(mean, cov, d + h) - o.yield_value(mean, cov, d - h)) / (2 * h)
    assert o.grad_det(mean, cov, d)[0] == pytest.approx(gd, abs=1e-9)


def test_halfspace_oracle_needs_unit_normal():
    with pytest.raises(ConfigurationError):
        halfspace_oracle([1.0, 1.0], 0.0)
