import numpy as np
import pytest
from conftest import random_chain

from emdemosaic.core import CfaPattern, DomainError, MosaicFrame, PolarImage, RgbImage, mosaic_sample
from emdemosaic.estep import (PosteriorSummary, assemble_moments, even_odd_aggregates,
                              gaussian_posterior_exact, kalman_estep, loadings, qn_estep)
from emdemosaic.prior import BrightnessPrior, fit_ar_surrogate


def relerr(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


def image_instance(rng, shape=(32, 32), sigma=2.0):
    l = 50 + 10 * rng.standard_normal(shape)
    theta = rng.uniform(0.3, 1.2, shape)
    phi = rng.uniform(0.2, 1.3, shape)
    angles = PolarImage(np.ones(shape), theta, phi)
    h = loadings(MosaicFrame(np.zeros(shape), CfaPattern("RGGB"), sigma), angles)
    y = h * l + sigma * rng.standard_normal(shape)
    return MosaicFrame(y, CfaPattern("RGGB"), sigma), angles, BrightnessPrior(shape, 100.0)


def test_identity_example():
    # Sigma = I, h = 1, sigma = 1: mean = y / 2
    prior = BrightnessPrior(2, 1.0, 0.0)
    frame = MosaicFrame([[4.0, -2.0]], None, 1.0)
    angles = PolarImage(np.ones((1, 2)), [[0.0, np.pi / 2]])
    s = gaussian_posterior_exact(frame, angles, prior)
    np.testing.assert_allclose(s.mean, [[2.0, -1.0]], atol=1e-15)
    np.testing.assert_allclose(s.variance, [[0.5, 0.5]], atol=1e-15)


def test_noiseless_limit_recovers_samples(rng):
    y = rng.uniform(1, 5, (1, 6))
    frame = MosaicFrame(y, None, 1e-6)
    angles = PolarImage(np.ones((1, 6)), [[0.0, np.pi / 2] * 3])
    s = gaussian_posterior_exact(frame, angles, BrightnessPrior(6, 10.0))
    np.testing.assert_allclose(s.mean, y, rtol=1e-9)


def test_exact_posterior_residual(rng):
    frame, angles, prior = random_chain(rng, 16)
    s = gaussian_posterior_exact(frame, angles, prior)
    h = loadings(frame, angles).ravel()
    A = prior.precision_matrix() + np.diag(h ** 2 / frame.sigma ** 2)
    rhs = h * frame.samples.ravel() / frame.sigma ** 2
    assert np.linalg.norm(A @ s.mean.ravel() - rhs) <= 1e-10 * max(1.0, np.linalg.norm(rhs))
    np.testing.assert_allclose(s.variance.ravel(), np.diag(np.linalg.inv(A)), rtol=1e-10)


def test_exact_posterior_needs_noise():
    with pytest.raises(DomainError):
        gaussian_posterior_exact(MosaicFrame([[1.0, 2.0]], None, 0.0),
                                 PolarImage(np.ones((1, 2)), np.zeros((1, 2))), BrightnessPrior(2))


@pytest.mark.parametrize("n", [2, 3, 8, 31, 64])
def test_kalman_matches_dense_oracle(rng, n):
    for _ in range(5):
        frame, angles, prior = random_chain(rng, n, sigma=rng.uniform(0.1, 2.0))
        ar = fit_ar_surrogate(prior, 2)
        k = kalman_estep(frame, angles, ar)
        e = gaussian_posterior_exact(frame, angles, ar)
        assert relerr(k.mean, e.mean) <= 1e-8
        assert relerr(k.second_moment, e.second_moment) <= 1e-8


def test_kalman_order_one_and_three(rng):
    frame, angles, prior = random_chain(rng, 40)
    for order in (1, 3):
        ar = fit_ar_surrogate(prior, order)
        assert relerr(kalman_estep(frame, angles, ar).mean,
                      gaussian_posterior_exact(frame, angles, ar).mean) <= 1e-8


def test_kalman_uninformative_data(rng):
    frame, angles, prior = random_chain(rng, 32, sigma=1e8)
    s = kalman_estep(frame, angles, prior)
    assert np.max(np.abs(s.mean)) < 1e-6


def test_kalman_constant_input_symmetry():
    n = 64
    frame = MosaicFrame(np.full((1, n), 5.0), None, 0.5)
    angles = PolarImage(np.ones((1, n)), np.full((1, n), np.pi / 4))
    ar = fit_ar_surrogate(BrightnessPrior(n, 50.0), 2)
    k = kalman_estep(frame, angles, ar)
    e = gaussian_posterior_exact(frame, angles, ar)
    assert relerr(k.mean, e.mean) <= 1e-8
    # the solution is mirror symmetric and flat away from the ends
    np.testing.assert_allclose(k.mean[0], k.mean[0][::-1], rtol=1e-9)
    mid = k.mean[0, 16:48]
    assert np.ptp(mid) <= 1e-3 * mid.mean()


def test_kalman_rejects_images():
    frame = MosaicFrame(np.zeros((2, 2)), CfaPattern("RGGB"), 1.0)
    with pytest.raises(DomainError):
        kalman_estep(frame, PolarImage(np.ones((2, 2)), np.zeros((2, 2))), BrightnessPrior((2, 2)))


@pytest.mark.parametrize("n", [64, 256, 1024])
def test_qn_mean_matches_dense_oracle(rng, n):
    frame, angles, prior = random_chain(rng, n, sigma=0.5)
    q = qn_estep(frame, angles, prior)
    e = gaussian_posterior_exact(frame, angles, prior)
    assert q.converged
    assert relerr(q.mean, e.mean) <= 1e-6
    rel_var = np.abs(q.variance - e.variance) / e.variance
    assert rel_var.max() <= 0.2


def test_qn_image_variances_and_gradient(rng):
    frame, angles, prior = image_instance(rng)
    q = qn_estep(frame, angles, prior)
    e = gaussian_posterior_exact(frame, angles, prior)
    assert relerr(q.mean, e.mean) <= 1e-6
    assert np.max(np.abs(q.variance - e.variance) / e.variance) <= 0.2
    # independent gradient: dense precision plus data term
    h = loadings(frame, angles).ravel()
    s2 = frame.sigma ** 2
    m = q.mean.ravel()
    g = h * (h * m - frame.samples.ravel()) / s2 + prior.precision_matrix() @ m
    tol = 1e-8 * np.linalg.norm(h * frame.samples.ravel() / s2)
    assert q.converged and np.linalg.norm(g) <= tol * (1 + 1e-6)


def test_qn_nonconvergence_is_reported(rng):
    frame, angles, prior = image_instance(rng, (16, 16))
    q = qn_estep(frame, angles, prior, max_iter=1)
    assert not q.converged and q.iterations == 1
    with pytest.raises(DomainError):
        qn_estep(frame, angles, prior, memory=1)
    with pytest.raises(DomainError):
        qn_estep(frame, angles, prior, grad_tol=0.0)


def test_posterior_variance_below_prior_variance(rng):
    frame, angles, prior = random_chain(rng, 48)
    e = gaussian_posterior_exact(frame, angles, prior)
    assert np.all(e.variance <= np.diag(prior.covariance_matrix()) + 1e-12)
    assert np.all(e.second_moment >= e.mean ** 2 - 1e-9)


def test_assemble_moments_example():
    frame = MosaicFrame([[1.0, 2.0]], None, 1.0)
    P, D2 = assemble_moments(frame, PosteriorSummary(np.array([[3.0, 4.0]]), np.array([[10.0, 17.0]])))
    assert P.tolist() == [[3.0, 8.0]] and D2.tolist() == [[10.0, 17.0]]
    P0, _ = assemble_moments(frame, PosteriorSummary(np.zeros((1, 2)), np.zeros((1, 2))))
    assert np.all(P0 == 0)


def test_even_odd_aggregates_by_hand(rng):
    P = rng.standard_normal(6)
    D2 = rng.uniform(0, 1, 6)
    Pe, Po, De2, Do2 = even_odd_aggregates(P, D2)
    assert Pe == pytest.approx(P[0] + P[2] + P[4])
    assert Po == pytest.approx(P[1] + P[3] + P[5])
    assert De2 == pytest.approx(D2[0] + D2[2] + D2[4])
    assert Do2 == pytest.approx(D2[1] + D2[3] + D2[5])


def test_loadings_follow_the_cfa():
    img = RgbImage.from_array(np.ones((2, 2, 3)))
    frame = mosaic_sample(img, CfaPattern("RGGB"), 0.0)
    angles = PolarImage(np.ones((2, 2)), np.full((2, 2), 0.4), np.full((2, 2), 0.3))
    h = loadings(frame, angles)
    assert h[0, 0] == pytest.approx(np.sin(0.4) * np.cos(0.3))
    assert h[0, 1] == pytest.approx(np.cos(0.4))
    assert h[1, 1] == pytest.approx(np.sin(0.4) * np.sin(0.3))
