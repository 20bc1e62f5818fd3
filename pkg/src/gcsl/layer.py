"""Parameters of the two heads and the association map between them.

A softmax head (``DiscriminativeParams``) and a shared-covariance Gaussian
head (``GenerativeParams``) over the same input. Because the covariance is
shared, the Gaussian head's Bayes posterior is itself a softmax of affine
scores, which gives the parameter association used by the coupling prior.

All functions accept a single sample ``(D,)`` or a batch ``(N, D)``.
Class indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .numerics import LOG_2PI, CholFactor, cholesky_solve, log_softmax, log_sum_exp, softmax


@dataclass
class DiscriminativeParams:
    weights: np.ndarray  # (C, D), row c is w_c
    biases: np.ndarray  # (C,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ContractError("weights must be (C, D) and biases (C,)")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, n_classes: int, dim: int) -> "DiscriminativeParams":
        return cls(np.zeros((n_classes, dim)), np.zeros(n_classes))


@dataclass
class GenerativeParams:
    mix_logits: np.ndarray  # (C,), class priors are softmax(mix_logits)
    means: np.ndarray  # (C, D)
    precision: CholFactor  # shared inverse covariance

    def __post_init__(self):
        self.mix_logits = np.asarray(self.mix_logits, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.ndim != 2 or self.mix_logits.shape != (self.means.shape[0],):
            raise ContractError("means must be (C, D) and mix_logits (C,)")
        if self.precision.dim != self.means.shape[1]:
            raise ContractError("precision dimension does not match the means")

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_priors(self) -> np.ndarray:
        return log_softmax(self.mix_logits)

    def priors(self) -> np.ndarray:
        return softmax(self.mix_logits)

    def precision_matrix(self) -> np.ndarray:
        return self.precision.matrix()


def _as_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != dim:
        raise ContractError(f"expected input dimension {dim}, got shape {x.shape}")
    return xb, single


def disc_scores(x, theta: DiscriminativeParams) -> np.ndarray:
    xb, single = _as_batch(x, theta.dim)
    s = xb @ theta.weights.T + theta.biases
    return s[0] if single else s


def posterior_disc(x, theta: DiscriminativeParams) -> np.ndarray:
    """Softmax posterior of the affine scores ``w_c . x + b_c``."""
    s = disc_scores(x, theta)
    return np.exp(s - np.expand_dims(log_sum_exp(s, axis=-1), -1))


def joint_log_density_all(x, gen: GenerativeParams) -> np.ndarray:
    """``log pi_c + log N(x; mu_c, Sigma)`` for every class, shape ``(N, C)`` or ``(C,)``."""
    xb, single = _as_batch(x, gen.dim)
    lower = gen.precision.lower()
    # Mahalanobis terms via ||L^T (x - mu)||^2
    diff = xb[:, None, :] - gen.means[None, :, :]
    proj = diff @ lower
    maha = np.sum(proj * proj, axis=-1)
    const = 0.5 * gen.precision.logdet() - 0.5 * gen.dim * LOG_2PI
    out = gen.log_priors()[None, :] + const - 0.5 * maha
    return out[0] if single else out


def joint_log_density(x, c: int, gen: GenerativeParams):
    if not 0 <= c < gen.n_classes:
        raise ContractError(f"class index {c} outside [0, {gen.n_classes})")
    return joint_log_density_all(x, gen)[..., c]


def marginal_log_density(x, gen: GenerativeParams):
    return log_sum_exp(joint_log_density_all(x, gen), axis=-1)


def associate(gen: GenerativeParams) -> DiscriminativeParams:
    """Softmax parameters whose posterior equals the Gaussian head's Bayes posterior.

    ``w_c = Lambda mu_c`` and ``b_c = log pi_c - mu_c^T Lambda mu_c / 2``.
    """
    prec = gen.precision_matrix()
    weights = gen.means @ prec
    biases = gen.log_priors() - 0.5 * np.sum(weights * gen.means, axis=1)
    return DiscriminativeParams(weights, biases)


def posterior_gen(x, gen: GenerativeParams) -> np.ndarray:
    """Bayes-rule class posterior of the Gaussian head.

    The quadratic term in ``x`` is shared by every class and cancels, so the
    posterior is a softmax of scores that are affine in ``x``.
    """
    xb, single = _as_batch(x, gen.dim)
    lam_x = cholesky_solve(gen.precision, xb)  # (N, D)
    lower = gen.precision.lower()
    half_quad = 0.5 * np.sum((gen.means @ lower) ** 2, axis=1)
    scores = lam_x @ gen.means.T + gen.log_priors() - half_quad
    post = softmax(scores, axis=-1)
    return post[0] if single else post
