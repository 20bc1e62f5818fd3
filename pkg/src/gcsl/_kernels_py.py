"""Pure-numpy fallback for ``gcsl._core``; same signatures and semantics."""

import numpy as np


def mixture_energy_grad(x, means, lower, cls=-1):
    x = np.asarray(x, dtype=np.float64)
    if cls >= 0:
        means = means[cls : cls + 1]
    diff = x[:, None, :] - means[None, :, :]  # (n, C, D)
    u = diff @ lower  # rows are (L^T d)^T
    e = 0.5 * np.sum(u * u, axis=-1)
    emin = e.min(axis=1, keepdims=True)
    w = np.exp(emin - e)
    z = w.sum(axis=1, keepdims=True)
    energy = (emin - np.log(z))[:, 0]
    w /= z
    grad = np.einsum("nc,ncd->nd", w, u @ lower.T)
    return energy, grad


def mixture_sgld(x, means, lower, step_size, noise, lo, hi, clip, cls, traj=None):
    # overflow shows up as a non-finite state, reported through the return value
    with np.errstate(over="ignore", invalid="ignore"):
        return _sgld_loop(x, means, lower, step_size, noise, lo, hi, clip, cls, traj)


def _sgld_loop(x, means, lower, step_size, noise, lo, hi, clip, cls, traj):
    half = 0.5 * step_size
    for t in range(noise.shape[0]):
        _, grad = mixture_energy_grad(x, means, lower, cls)
        nxt = x - half * grad + noise[t]
        if clip:
            np.clip(nxt, lo, hi, out=nxt)
        if not np.all(np.isfinite(nxt)):
            return t + 1
        x[...] = nxt
        if traj is not None:
            traj[t] = nxt
    return -1


def hybrid_loss_grad(x, labels, W, b, a, M, raw, lam, gW, gb, ga, gM, gR):
    from .layer import DiscriminativeParams, GenerativeParams
    from .model import HybridModel
    from .numerics import CholFactor
    from .objectives import semi_supervised_loss

    model = HybridModel(DiscriminativeParams(W, b), GenerativeParams(a, M, CholFactor(np.tril(raw))))
    loss, grads = semi_supervised_loss(x, labels, model, lam)
    gW[...] = grads["disc.weights"]
    gb[...] = grads["disc.biases"]
    ga[...] = grads["gen.mix_logits"]
    gM[...] = grads["gen.means"]
    gR[...] = grads["gen.precision"]
    return loss.cross_entropy, loss.generative_nll, loss.coupling_penalty
