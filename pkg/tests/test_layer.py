import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from gcsl.errors import ContractError
from gcsl.layer import (
    DiscriminativeParams,
    GenerativeParams,
    associate,
    joint_log_density,
    joint_log_density_all,
    marginal_log_density,
    posterior_disc,
    posterior_gen,
)
from gcsl.numerics import CholFactor

from builders import random_disc, random_gen
from oracles import bayes_posterior, covariance_of, joint_logpdf, softmax_naive

seeds = st.integers(0, 2**32 - 1)


def iso_gen(means, variance, priors=None):
    means = np.asarray(means, dtype=float)
    c, d = means.shape
    priors = np.full(c, 1.0 / c) if priors is None else np.asarray(priors)
    prec = CholFactor.from_matrix(np.eye(d) / variance)
    return GenerativeParams(np.log(priors), means, prec)


def test_zero_disc_is_uniform():
    theta = DiscriminativeParams.zeros(4, 3)
    np.testing.assert_allclose(posterior_disc([1.0, -2.0, 5.0], theta), np.full(4, 0.25), atol=1e-15)


def test_disc_posterior_forced_value():
    theta = DiscriminativeParams([[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0])
    np.testing.assert_allclose(posterior_disc([math.log(3), 0.0], theta), [0.75, 0.25], atol=1e-15)


@given(seeds, st.integers(2, 6), st.integers(1, 5))
def test_disc_posterior_matches_naive(seed, c, d):
    rng = np.random.default_rng(seed)
    theta = random_disc(rng, c, d)
    x = rng.standard_normal(d)
    p = posterior_disc(x, theta)
    naive = softmax_naive([float(theta.weights[k] @ x + theta.biases[k]) for k in range(c)])
    np.testing.assert_allclose(p, naive, atol=1e-12)
    assert abs(p.sum() - 1.0) < 1e-12


def test_disc_dimension_mismatch():
    with pytest.raises(ContractError):
        posterior_disc([1.0, 2.0, 3.0], DiscriminativeParams.zeros(2, 2))


def test_standard_normal_mode():
    gen = GenerativeParams([0.0], [[0.0]], CholFactor.identity(1))
    assert joint_log_density([0.0], 0, gen) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert round(float(joint_log_density([0.0], 0, gen)), 4) == -0.9189


def test_density_at_mean_is_shift_invariant():
    rng = np.random.default_rng(1)
    gen = random_gen(rng, 2, 3)
    moved = GenerativeParams(gen.mix_logits, gen.means + 7.3, gen.precision)
    assert joint_log_density(gen.means[1], 1, gen) == pytest.approx(joint_log_density(moved.means[1], 1, moved), abs=1e-12)


@given(seeds, st.integers(1, 4), st.integers(1, 4))
def test_joint_density_matches_scipy(seed, c, d):
    rng = np.random.default_rng(seed)
    gen = random_gen(rng, c, d)
    x = rng.standard_normal(d)
    cov = covariance_of(gen.precision.raw)
    for k in range(c):
        want = joint_logpdf(x, k, gen.priors(), gen.means, cov)
        assert joint_log_density(x, k, gen) == pytest.approx(want, abs=1e-10)


def test_invalid_class_index():
    gen = iso_gen([[0.0, 0.0], [1.0, 1.0]], 1.0)
    for c in (-1, 2):
        with pytest.raises(ContractError):
            joint_log_density([0.0, 0.0], c, gen)


def test_single_class_marginal_equals_joint():
    rng = np.random.default_rng(2)
    gen = random_gen(rng, 1, 3)
    x = rng.standard_normal((4, 3))
    np.testing.assert_allclose(marginal_log_density(x, gen), joint_log_density(x, 0, gen), atol=1e-15)


@given(seeds)
def test_marginal_dominates_each_joint(seed):
    rng = np.random.default_rng(seed)
    gen = random_gen(rng, 3, 2)
    x = rng.standard_normal((5, 2))
    assert np.all(marginal_log_density(x, gen)[:, None] >= joint_log_density_all(x, gen) - 1e-12)


def test_marginal_integrates_to_one():
    rng = np.random.default_rng(11)
    gen = random_gen(rng, 2, 2)
    cov = covariance_of(gen.precision.raw)
    half = 6 * math.sqrt(cov.diagonal().max())
    lo = gen.means.min(axis=0) - half
    hi = gen.means.max(axis=0) + half
    g1 = np.linspace(lo[0], hi[0], 801)
    g2 = np.linspace(lo[1], hi[1], 801)
    pts = np.stack(np.meshgrid(g1, g2, indexing="ij"), axis=-1).reshape(-1, 2)
    dens = np.exp(marginal_log_density(pts, gen)).reshape(801, 801)
    mass = trapezoid(trapezoid(dens, g2, axis=1), g1)
    assert abs(mass - 1.0) < 1e-2


def test_symmetric_classes_at_origin():
    gen = iso_gen([[1.0, -2.0], [-1.0, 2.0]], 0.7)
    np.testing.assert_allclose(posterior_gen([0.0, 0.0], gen), [0.5, 0.5], atol=1e-15)


@given(seeds, st.integers(2, 5), st.integers(1, 4))
def test_gen_posterior_matches_bayes_rule(seed, c, d):
    rng = np.random.default_rng(seed)
    gen = random_gen(rng, c, d, scale=0.5)
    x = 0.5 * rng.standard_normal(d)
    want = bayes_posterior(x, gen.priors(), gen.means, covariance_of(gen.precision.raw))
    np.testing.assert_allclose(posterior_gen(x, gen), want, atol=1e-12)


@given(seeds, st.sampled_from([1, 2, 5, 10]), st.sampled_from([2, 3, 7]))
def test_association_identity(seed, d, c):
    rng = np.random.default_rng(seed)
    gen = random_gen(rng, c, d)
    x = rng.standard_normal((3, d))
    diff = np.abs(posterior_disc(x, associate(gen)) - posterior_gen(x, gen))
    assert diff.max() < 1e-10


@given(seeds, st.floats(-30, 30))
def test_gen_posterior_prior_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    gen = random_gen(rng, 3, 2)
    moved = GenerativeParams(gen.mix_logits + shift, gen.means, gen.precision)
    x = rng.standard_normal((4, 2))
    np.testing.assert_allclose(posterior_gen(x, moved), posterior_gen(x, gen), atol=1e-12)


@given(seeds)
def test_posteriors_on_simplex(seed):
    rng = np.random.default_rng(seed)
    gen = random_gen(rng, 4, 3, scale=3.0)
    x = 4 * rng.standard_normal((6, 3))
    for p in (posterior_gen(x, gen), posterior_disc(x, associate(gen))):
        assert np.all(p >= 0) and np.all(p <= 1)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_associate_identity_covariance():
    gen = iso_gen([[1.0, 0.0], [0.0, 1.0]], 1.0)
    theta = associate(gen)
    np.testing.assert_allclose(theta.weights[0], [1.0, 0.0], atol=1e-15)
    assert theta.biases[0] == pytest.approx(math.log(0.5) - 0.5, abs=1e-15)
    assert round(float(theta.biases[0]), 4) == -1.1931


def test_associate_two_gaussian_task():
    # shared covariance 0.5 I, equal priors, class means (0, -0.5) and (0, 0.5)
    gen = iso_gen([[0.0, -0.5], [0.0, 0.5]], 0.5)
    theta = associate(gen)
    np.testing.assert_allclose(theta.weights[0], [0.0, -1.0], atol=1e-14)
    assert theta.biases[0] == pytest.approx(math.log(0.5) - 0.25, abs=1e-14)
    assert round(float(theta.biases[0]), 4) == -0.9431


def test_param_shape_validation():
    with pytest.raises(ContractError):
        DiscriminativeParams(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ContractError):
        GenerativeParams(np.zeros(2), np.zeros((2, 3)), CholFactor.identity(2))
