import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emdemosaic.core import HALF_PI, DomainError, PolarImage, unit_vectors
from emdemosaic.prior import (BrightnessPrior, LinkGraph, apply_precision, calibrate_prior,
                              color_potential, fit_ar_surrogate, mrf_energy, spectral_multipliers)

angle = st.floats(0.0, HALF_PI, allow_nan=False)


def dft_matrix(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def test_multiplier_examples():
    m = spectral_multipliers(BrightnessPrior(4, 1.0, 2.0, 0.01))[0]
    assert m[1] == pytest.approx((np.pi / 2) ** -2, rel=1e-15)
    assert m[0] == pytest.approx(0.01 ** -2, rel=1e-15)
    # folded frequency: k = 3 is |w| = pi/2 as well
    assert m[3] == pytest.approx(m[1], rel=1e-15)
    assert m[2] == pytest.approx(np.pi ** -2, rel=1e-15)


def test_white_limit():
    m = spectral_multipliers(BrightnessPrior(16, 2.5, 0.0))
    np.testing.assert_array_equal(m, 2.5)


def test_default_dc_clamp():
    p = BrightnessPrior(32)
    assert p.omega_min == pytest.approx(2 * np.pi / 32)
    assert np.all(np.isfinite(p.multipliers())) and np.all(p.multipliers() > 0)


def test_2d_multipliers_are_radial():
    p = BrightnessPrior((8, 8), 1.0, 2.0, 0.1)
    m = p.multipliers()
    assert m[1, 2] == pytest.approx(m[2, 1])
    w = np.hypot(2 * np.pi / 8, 2 * 2 * np.pi / 8)
    assert m[1, 2] == pytest.approx(w ** -2)


def test_invalid_priors():
    for kw in ({"eps0": 0.0}, {"nu": -1.0}, {"omega_min": 0.0}, {"omega_min": 4.0}):
        with pytest.raises(DomainError):
            BrightnessPrior(8, **kw)


def test_precision_zero_vector():
    np.testing.assert_array_equal(apply_precision(BrightnessPrior(8), np.zeros(8)), 0.0)


def test_precision_covariance_round_trip(rng):
    p = BrightnessPrior(64, 3.0, 2.0)
    v = rng.standard_normal(64)
    np.testing.assert_allclose(p.apply_covariance(apply_precision(p, v)), v, atol=1e-10)
    np.testing.assert_allclose(apply_precision(p, p.apply_covariance(v)), v, atol=1e-10)


def test_precision_matches_dense_dft_oracle(rng):
    n = 8
    p = BrightnessPrior(n, 1.7, 1.5, 0.3)
    F = dft_matrix(n)
    dense = (np.conj(F).T @ np.diag(1.0 / p.multipliers()[0]) @ F / n).real
    v = rng.standard_normal(n)
    np.testing.assert_allclose(apply_precision(p, v), dense @ v, atol=1e-10)
    np.testing.assert_allclose(p.precision_matrix(), dense, atol=1e-10)


def test_2d_covariance_matches_dense_oracle(rng):
    p = BrightnessPrior((4, 6), 1.0, 2.0)
    v = rng.standard_normal(24)
    np.testing.assert_allclose(p.apply_covariance(v), p.covariance_matrix() @ v, atol=1e-10)
    F = np.kron(dft_matrix(4), dft_matrix(6))
    dense = (np.conj(F).T @ np.diag(p.multipliers().ravel()) @ F / 24).real
    np.testing.assert_allclose(p.covariance_matrix(), dense, atol=1e-10)


def test_length_mismatch():
    with pytest.raises(DomainError):
        apply_precision(BrightnessPrior(8), np.zeros(7))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 64), st.floats(0.1, 3.0), st.integers(0, 2 ** 32 - 1))
def test_covariance_is_spd(n, nu, seed):
    C = BrightnessPrior(n, 1.0, nu).covariance_matrix()
    np.testing.assert_allclose(C, C.T, atol=1e-12 * np.abs(C).max())
    v = np.random.default_rng(seed).standard_normal(n)
    assert v @ C @ v > 0


def test_calibration_matches_sample_spread(rng):
    y = 100 + 20 * rng.standard_normal((1, 256))
    p = calibrate_prior(y)
    assert p.marginal_variance() == pytest.approx(np.var(y), rel=1e-12)
    assert np.mean(np.diag(p.covariance_matrix())) == pytest.approx(np.var(y), rel=1e-10)


def test_calibration_of_constant_input():
    p = calibrate_prior(np.full((1, 16), 3.0))
    assert p.marginal_variance() == pytest.approx(9.0)


def test_ar_surrogate_matches_leading_lags():
    prior = BrightnessPrior(128, 2.0, 2.0)
    ar = fit_ar_surrogate(prior, 2)
    target = np.fft.ifft(prior.multipliers()[0]).real
    np.testing.assert_allclose(ar.autocovariance()[:3], target[:3], rtol=1e-9)


def test_ar_autocovariance_matches_spectral_oracle():
    ar = fit_ar_surrogate(BrightnessPrior(64, 1.0, 2.0), 2)
    # AR spectral density q / |1 - sum a_k e^{-iwk}|^2, inverted on a fine grid
    m = 1 << 16
    w = 2 * np.pi * np.arange(m) / m
    denom = np.abs(1 - sum(a * np.exp(-1j * w * (k + 1)) for k, a in enumerate(ar.coeffs))) ** 2
    gamma = np.fft.ifft(ar.q / denom).real[:64]
    np.testing.assert_allclose(ar.autocovariance(), gamma, rtol=1e-6, atol=1e-9 * gamma[0])


def test_ar_surrogate_rejects_images():
    with pytest.raises(DomainError):
        fit_ar_surrogate(BrightnessPrior((4, 4)))


def u1d(theta):
    return unit_vectors(theta, 0.0)


def test_color_potential_examples():
    assert color_potential(u1d(0.4), u1d(0.4)) == 0.0
    assert color_potential(u1d(0.0), u1d(HALF_PI)) == pytest.approx(1.0)
    assert color_potential(u1d(0.3), u1d(0.8)) == pytest.approx(np.sin(0.5), rel=1e-12)
    with pytest.raises(DomainError):
        color_potential(np.array([1.0, 1.0, 0.0]), u1d(0.2))


@given(angle, angle, angle, angle)
def test_color_potential_properties(t1, p1, t2, p2):
    a, b = unit_vectors(t1, p1), unit_vectors(t2, p2)
    v = color_potential(a, b)
    assert 0.0 <= v <= 1.0
    assert v == color_potential(b, a)
    # 1D specialization: |sin(t1 - t2)|
    assert color_potential(u1d(t1), u1d(t2)) == pytest.approx(abs(np.sin(t1 - t2)), abs=1e-12)


def test_mrf_energy_examples(rng):
    const = PolarImage(np.ones((3, 3)), np.full((3, 3), 0.7), np.full((3, 3), 0.2))
    g = LinkGraph((3, 3), [0, 1, 4], [1, 4, 8], [1.0, 2.0, 0.5])
    assert mrf_energy(const, g) == 0.0
    two = PolarImage(np.ones((1, 2)), [[0.0, HALF_PI]])
    assert mrf_energy(two, LinkGraph.chain(2, 2.0)) == pytest.approx(2.0)

    theta = rng.uniform(0, HALF_PI, 6)
    w = rng.uniform(0, 3, 5)
    oracle = sum(w[k] * abs(np.sin(theta[k] - theta[k + 1])) for k in range(5))
    chain = PolarImage(np.ones((1, 6)), theta[None])
    assert mrf_energy(chain, LinkGraph.chain(6, w)) == pytest.approx(oracle, rel=1e-12)
    flipped = LinkGraph((1, 6), np.arange(1, 6), np.arange(5), w)
    assert mrf_energy(chain, flipped) == mrf_energy(chain, LinkGraph.chain(6, w))


def test_link_graph_contracts():
    with pytest.raises(DomainError):
        LinkGraph((2, 2), [0], [0], [1.0])
    with pytest.raises(DomainError):
        LinkGraph((2, 2), [0], [1], [-1.0])
    with pytest.raises(DomainError):
        LinkGraph((2, 2), [0], [4], [1.0])
    with pytest.raises(DomainError):
        mrf_energy(PolarImage(np.ones((1, 3)), np.zeros((1, 3))), LinkGraph.chain(4, 1.0))
    g = LinkGraph((1, 4), [1, 0], [2, 1], [2.0, 3.0])
    assert g.is_chain()
    np.testing.assert_array_equal(g.chain_weights(), [3.0, 2.0, 0.0])
    assert not LinkGraph((1, 4), [0], [2], [1.0]).is_chain()
    nbr, wt = g.adjacency()
    assert nbr[1].tolist() == [0, 2] and wt[1].tolist() == [3.0, 2.0]
    assert wt[3].tolist() == [0.0, 0.0]
