"""Hybrid objectives and their analytic gradients.

Every loss is the negative log of the hybrid likelihood divided by the batch
size ``N``: per-sample terms are summed and divided by ``N`` and the coupling
penalty ``-log p(theta, theta~)`` is divided by ``N`` as well. The flat
prior on the generative parameters contributes nothing.

Labels are 0-based class indices; ``-1`` marks an unlabeled sample.
Gradients are returned as a dict keyed like ``HybridModel.arrays()``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .layer import DiscriminativeParams, GenerativeParams, joint_log_density_all
from .model import HybridModel
from .numerics import factor_grad, log_sum_exp, softmax

GradientBundle = dict  # name -> ndarray, same keys and shapes as HybridModel.arrays()


@dataclass
class LossBreakdown:
    cross_entropy: float
    generative_nll: float
    coupling_penalty: float

    @property
    def total(self) -> float:
        return self.cross_entropy + self.generative_nll + self.coupling_penalty


def association_gaps(disc: DiscriminativeParams, gen: GenerativeParams):
    """Residuals ``w_c - Lambda mu_c`` (C, D) and ``b_c - (log pi_c - mu^T Lambda mu / 2)`` (C,)."""
    if disc.weights.shape != gen.means.shape:
        raise ContractError("discriminative and generative shapes differ")
    lam_mu = gen.means @ gen.precision_matrix()
    target_b = gen.log_priors() - 0.5 * np.sum(lam_mu * gen.means, axis=1)
    return disc.weights - lam_mu, disc.biases - target_b


def association_residual(disc: DiscriminativeParams, gen: GenerativeParams) -> float:
    r, e = association_gaps(disc, gen)
    return float(np.sum(r * r) + np.sum(e * e))


def coupling_log_prior(disc: DiscriminativeParams, gen: GenerativeParams, lam: float) -> float:
    """Log of the Gaussian coupling prior, additive constants dropped.

    The bias target includes ``log pi_c`` so that the prior mean is exactly
    the associated bias.
    """
    if lam < 0:
        raise ContractError("lambda must be >= 0")
    return -0.5 * lam * association_residual(disc, gen)


def coupling_grads(disc: DiscriminativeParams, gen: GenerativeParams, lam: float) -> GradientBundle:
    """Gradient of the penalty ``-log p(theta, theta~)``."""
    r, e = association_gaps(disc, gen)
    prec = gen.precision_matrix()
    lower = gen.precision.lower()
    means = gen.means
    pi = gen.priors()
    g_lambda = -lam * r.T @ means + 0.5 * lam * (means.T * e) @ means
    return {
        "disc.weights": lam * r,
        "disc.biases": lam * e,
        "gen.mix_logits": -lam * (e - pi * e.sum()),
        "gen.means": lam * (e[:, None] * means - r) @ prec,
        "gen.precision": factor_grad((g_lambda + g_lambda.T) @ lower, lower),
    }


def cross_entropy_terms(z, labels, disc: DiscriminativeParams, n_total: int):
    """Summed cross-entropy over labeled rows, divided by ``n_total``.

    Returns ``(loss, grads, dz)`` where ``dz`` is the gradient w.r.t. every
    row of ``z`` (zero on unlabeled rows).
    """
    labeled = labels >= 0
    dz = np.zeros_like(z)
    g_w = np.zeros_like(disc.weights)
    g_b = np.zeros_like(disc.biases)
    if not np.any(labeled):
        return 0.0, {"disc.weights": g_w, "disc.biases": g_b}, dz
    zl = z[labeled]
    yl = labels[labeled]
    scores = zl @ disc.weights.T + disc.biases
    lse = log_sum_exp(scores, axis=1)
    rows = np.arange(len(yl))
    loss = float(np.sum(lse - scores[rows, yl])) / n_total
    delta = np.exp(scores - lse[:, None])
    delta[rows, yl] -= 1.0
    delta /= n_total
    g_w = delta.T @ zl
    g_b = delta.sum(axis=0)
    dz[labeled] = delta @ disc.weights
    return loss, {"disc.weights": g_w, "disc.biases": g_b}, dz


def gaussian_nll_terms(x, labels, gen: GenerativeParams, n_total: int):
    """Generative NLL: class-conditional joint for labeled rows, mixture marginal otherwise.

    Returns ``(loss, grads, responsibilities)``. Responsibilities are one-hot
    on labeled rows and the mixture posterior on unlabeled rows.
    """
    ll = joint_log_density_all(x, gen)  # (N, C)
    labeled = labels >= 0
    n = x.shape[0]
    gamma = np.empty_like(ll)
    total = 0.0
    if np.any(labeled):
        rows = np.nonzero(labeled)[0]
        total -= float(np.sum(ll[rows, labels[rows]]))
        gamma[rows] = 0.0
        gamma[rows, labels[rows]] = 1.0
    if not np.all(labeled):
        rows = np.nonzero(~labeled)[0]
        total -= float(np.sum(log_sum_exp(ll[rows], axis=1)))
        gamma[rows] = softmax(ll[rows], axis=1)

    lower = gen.precision.lower()
    prec = lower @ lower.T
    diff = x[:, None, :] - gen.means[None, :, :]  # (N, C, D)
    weighted = np.einsum("nc,ncd->cd", gamma, diff)
    scatter = np.einsum("nc,ncd,nce->de", gamma, diff, diff)
    g_prec = factor_grad(scatter @ lower, lower)
    g_prec[np.diag_indices_from(g_prec)] -= n
    grads = {
        "gen.mix_logits": n * gen.priors() - gamma.sum(axis=0),
        "gen.means": -weighted @ prec,
        "gen.precision": g_prec,
    }
    for k in grads:
        grads[k] = grads[k] / n_total
    return total / n_total, grads, gamma


def _check_batch(x, labels, model: HybridModel):
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError("batch must be a non-empty (N, D) array")
    if labels.shape != (x.shape[0],):
        raise ContractError("one label per sample")
    if model.net is not None:
        raise ContractError("closed-form objectives need a model without a feature net")
    if x.shape[1] != model.feature_dim:
        raise ContractError(f"batch dim {x.shape[1]} != model dim {model.feature_dim}")
    if np.any(labels >= model.n_classes) or np.any(labels < -1):
        raise ContractError("label outside [0, C) and not -1")
    return x, labels


def semi_supervised_loss(x, labels, model: HybridModel, lam: float):
    """Loss and exact gradient for a batch mixing labeled and unlabeled rows."""
    x, labels = _check_batch(x, labels, model)
    if lam < 0:
        raise ContractError("lambda must be >= 0")
    n = x.shape[0]
    ce, grads, _ = cross_entropy_terms(x, labels, model.disc, n)
    nll, g_gen, _ = gaussian_nll_terms(x, labels, model.gen, n)
    grads.update(g_gen)
    penalty = -coupling_log_prior(model.disc, model.gen, lam) / n
    if lam > 0:
        for k, g in coupling_grads(model.disc, model.gen, lam).items():
            grads[k] = grads[k] + g / n
    return LossBreakdown(ce, nll, penalty), grads


def supervised_hybrid_loss(x, labels, model: HybridModel, lam: float):
    """As ``semi_supervised_loss`` but every row must carry a label."""
    labels = np.asarray(labels)
    if np.any(labels < 0):
        raise ContractError("supervised loss received an unlabeled sample")
    return semi_supervised_loss(x, labels, model, lam)
