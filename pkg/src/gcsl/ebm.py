"""Energy view of the Gaussian head, Langevin sampling and the contrastive gradient.

With a feature net ``z = f(x)`` the class energies are
``E(x; c) = (z - mu_c)^T Lambda (z - mu_c) / 2`` and the total energy is
``-log sum_c exp(-E(x; c))``. Mixture weights and normalising constants are
left out of the energy; the sampler targets ``exp(-E) / Z``.

Chains move by ``x <- x - step_size / 2 * dE/dx + noise`` (descent on the
energy), with ``noise_std`` set independently of ``step_size``. Without a
feature net the per-step work runs in the compiled kernel when available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import ContractError, SamplerDivergence
from .mlp import backward, forward
from .model import HybridModel
from .numerics import factor_grad

_BLOCK = 256


@dataclass
class SgldConfig:
    steps: int = 100
    step_size: float = 2.0
    noise_std: float = 0.01
    init_low: float | list = -1.0
    init_high: float | list = 1.0
    chains: int = 0  # samples per contrastive estimate; 0 means one per batch row
    clip: bool = False  # keep chains inside [init_low, init_high]
    persistent: bool = True
    buffer_size: int = 1000
    reinit_prob: float = 0.05

    def __post_init__(self):
        if self.steps < 0:
            raise ContractError("SGLD steps must be >= 0")
        if not self.step_size > 0:
            raise ContractError("SGLD step size must be > 0")
        if self.noise_std < 0:
            raise ContractError("SGLD noise std must be >= 0")
        if not 0.0 <= self.reinit_prob <= 1.0:
            raise ContractError("reinit_prob must lie in [0, 1]")

    def bounds(self, dim: int):
        lo = np.broadcast_to(np.asarray(self.init_low, dtype=np.float64), (dim,)).copy()
        hi = np.broadcast_to(np.asarray(self.init_high, dtype=np.float64), (dim,)).copy()
        if np.any(hi < lo):
            raise ContractError("init_high must be >= init_low")
        return lo, hi


@dataclass
class SampleBuffer:
    """Persistent chain states reused across contrastive updates."""

    samples: np.ndarray
    reinit_prob: float = 0.05

    @classmethod
    def uniform(cls, size: int, dim: int, cfg: SgldConfig, rng: np.random.Generator) -> "SampleBuffer":
        lo, hi = cfg.bounds(dim)
        return cls(rng.uniform(lo, hi, size=(size, dim)), cfg.reinit_prob)


def _check_class(model: HybridModel, c):
    if c is None:
        return -1
    if not 0 <= c < model.n_classes:
        raise ContractError(f"class index {c} outside [0, {model.n_classes})")
    return int(c)


def class_energies(x, model: HybridModel) -> np.ndarray:
    """``(N, C)`` energies (or ``(C,)`` for a single sample)."""
    z = model.features(x)
    single = z.ndim == 1
    zb = np.atleast_2d(z)
    if zb.shape[1] != model.feature_dim:
        raise ContractError("feature dimension does not match the Gaussian head")
    u = (zb[:, None, :] - model.gen.means[None]) @ model.gen.precision.lower()
    e = 0.5 * np.sum(u * u, axis=-1)
    return e[0] if single else e


def class_energy(x, c: int, model: HybridModel):
    return class_energies(x, model)[..., _check_class(model, c)]


def total_energy(x, model: HybridModel):
    e = class_energies(x, model)
    emin = np.min(e, axis=-1, keepdims=True)
    out = emin - np.log(np.sum(np.exp(emin - e), axis=-1, keepdims=True))
    return out[..., 0]


def energy_input_grad(x, model: HybridModel, cls=None):
    """Energy and its gradient w.r.t. the input rows of ``x`` (total energy if ``cls`` is None)."""
    cls = _check_class(model, cls)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    means = np.ascontiguousarray(model.gen.means)
    lower = np.ascontiguousarray(model.gen.precision.lower())
    if model.net is None:
        return kernels.mixture_energy_grad(np.ascontiguousarray(x), means, lower, cls)
    z, tape = forward(x, model.net)
    energy, dz = kernels.mixture_energy_grad(np.ascontiguousarray(z), means, lower, cls)
    return energy, backward(tape, dz)[1]


def _chain_noise(streams, steps, dim, std):
    noise = np.empty((steps, len(streams), dim))
    for i, stream in enumerate(streams):
        noise[:, i, :] = stream.standard_normal((steps, dim))
    noise *= std
    return noise


def sgld_chain(x0, model: HybridModel, cfg: SgldConfig, rng: np.random.Generator, cls=None, trajectory=False):
    """Run one Langevin chain per row of ``x0``.

    Each chain draws its noise from its own child stream of ``rng``. Returns
    the final states, or the ``(steps, n, D)`` array of post-step states when
    ``trajectory`` is set. Raises ``SamplerDivergence`` on a non-finite state.
    """
    cls = _check_class(model, cls)
    x = np.array(x0, dtype=np.float64, order="C", ndmin=2)
    n, dim = x.shape
    if dim != model.input_dim:
        raise ContractError(f"chain dimension {dim} != model input dimension {model.input_dim}")
    lo, hi = cfg.bounds(dim)
    streams = rng.spawn(n) if cfg.noise_std > 0 else None
    traj = np.empty((cfg.steps, n, dim)) if trajectory else None
    means = np.ascontiguousarray(model.gen.means)
    lower = np.ascontiguousarray(model.gen.precision.lower())
    half = 0.5 * cfg.step_size

    done = 0
    while done < cfg.steps:
        block = min(_BLOCK, cfg.steps - done)
        if streams is None:
            noise = np.zeros((block, n, dim))
        else:
            noise = _chain_noise(streams, block, dim, cfg.noise_std)
        out = traj[done : done + block] if trajectory else None
        if model.net is None:
            bad = kernels.mixture_sgld(x, means, lower, cfg.step_size, noise, lo, hi, cfg.clip, cls, out)
        else:
            bad = -1
            for t in range(block):
                _, grad = energy_input_grad(x, model, None if cls < 0 else cls)
                nxt = x - half * grad + noise[t]
                if cfg.clip:
                    np.clip(nxt, lo, hi, out=nxt)
                if not np.all(np.isfinite(nxt)):
                    bad = t + 1
                    break
                x = nxt
                if out is not None:
                    out[t] = nxt
        if bad >= 0:
            raise SamplerDivergence(done + bad)
        done += block

    if trajectory:
        return traj
    return x[0] if np.ndim(x0) == 1 else x


def _energy_param_grads(z, weights, model: HybridModel):
    """Sums over rows of ``weights[n, c] * dE(z_n; c)`` w.r.t. means, precision and ``z``."""
    gen = model.gen
    lower = gen.precision.lower()
    diff = z[:, None, :] - gen.means[None]  # (N, C, D)
    lam_diff = (diff @ lower) @ lower.T
    g_means = -np.einsum("nc,ncd->cd", weights, lam_diff)
    scatter = np.einsum("nc,ncd,nce->de", weights, diff, diff)
    g_prec = factor_grad(scatter @ lower, lower)
    dz = np.einsum("nc,ncd->nd", weights, lam_diff)
    return g_means, g_prec, dz


def _phase(x, labels, model: HybridModel):
    """Energy-weighted parameter gradients for one phase (data or model samples)."""
    if model.net is not None:
        z, tape = forward(x, model.net)
    else:
        z, tape = x, None
    e = class_energies(z, HybridModel(model.disc, model.gen, None))
    emin = e.min(axis=1, keepdims=True)
    w = np.exp(emin - e)
    z_sum = w.sum(axis=1, keepdims=True)
    energy = emin[:, 0] - np.log(z_sum[:, 0])
    w /= z_sum
    if labels is not None:
        rows = np.nonzero(labels >= 0)[0]
        w[rows] = 0.0
        w[rows, labels[rows]] = 1.0
        energy[rows] = e[rows, labels[rows]]
    g_means, g_prec, dz = _energy_param_grads(z, w, model)
    grads = {"gen.means": g_means, "gen.precision": g_prec}
    if tape is not None:
        for l, (dw, db) in enumerate(backward(tape, dz)[0]):
            grads[f"net.{l}.weight"] = dw
            grads[f"net.{l}.bias"] = db
    return grads, energy


def init_chains(n, dim, cfg: SgldConfig, rng, buffer: SampleBuffer | None = None):
    lo, hi = cfg.bounds(dim)
    if buffer is None:
        return rng.uniform(lo, hi, size=(n, dim)), None
    idx = rng.integers(len(buffer.samples), size=n)
    x0 = buffer.samples[idx].copy()
    fresh = rng.random(n) < buffer.reinit_prob
    x0[fresh] = rng.uniform(lo, hi, size=(int(fresh.sum()), dim))
    return x0, idx


def ebm_grad(x, labels, model: HybridModel, buffer, cfg: SgldConfig, rng, samples=None):
    """Contrastive estimate of the gradient of the mean generative NLL.

    ``(1/N) sum_n dE_data(x_n) - mean_s dE_total(x'_s)`` where ``E_data`` is the
    class energy for labeled rows and the total energy for unlabeled rows,
    and ``x'`` are SGLD samples (or ``samples`` when given). Returns
    ``(grads, contrastive_value, samples)``; ``grads`` covers the means, the
    precision and the feature-net parameters.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = None if labels is None else np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if samples is None:
        n_chains = cfg.chains or n
        x0, idx = init_chains(n_chains, x.shape[1], cfg, rng, buffer)
        samples = sgld_chain(x0, model, cfg, rng)
        if buffer is not None:
            buffer.samples[idx] = samples
    samples = np.atleast_2d(samples)

    g_data, e_data = _phase(x, labels, model)
    g_model, e_model = _phase(samples, None, model)
    grads = {k: g_data[k] / n - g_model[k] / len(samples) for k in g_data}
    value = float(np.mean(e_data) - np.mean(e_model))
    return grads, value, samples


def generate(model: HybridModel, n: int, cfg: SgldConfig, rng, cls=None) -> np.ndarray:
    """``n`` SGLD samples started from the uniform box ``[init_low, init_high]``."""
    dim = model.input_dim
    if n == 0:
        return np.empty((0, dim))
    x0, _ = init_chains(n, dim, cfg, rng)
    return sgld_chain(x0, model, cfg, rng, cls=cls)
