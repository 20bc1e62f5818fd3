"""Training loop, optimisers, evaluation and the gradient-check harness."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .data import Dataset
from .ebm import SampleBuffer, SgldConfig, ebm_grad
from .errors import ContractError, TrainingDiverged
from .gradcheck import GradCheckReport, central_differences, compare, upper_triangle
from .layer import DiscriminativeParams, GenerativeParams
from .mlp import MlpParams, backward, forward
from .model import HybridModel
from .numerics import CholFactor, make_rng
from .objectives import (
    LossBreakdown,
    coupling_grads,
    coupling_log_prior,
    cross_entropy_terms,
    semi_supervised_loss,
)

MODES = ("standalone_tractable", "joint_ebm")
OPTIMIZERS = ("sgd", "adam")


@dataclass
class FeatureNetConfig:
    hidden: list = field(default_factory=lambda: [16])
    out_dim: int | None = None  # defaults to the input dimension
    activation: str = "tanh"


@dataclass
class TrainConfig:
    mode: str = "standalone_tractable"
    epochs: int = 2000
    batch_size: int | None = None  # None trains full-batch
    learning_rate: float = 0.1
    optimizer: str = "sgd"
    lam: float = 10.0
    sgld: SgldConfig = field(default_factory=SgldConfig)
    seed: int = 0
    n_classes: int | None = None
    feature_net: FeatureNetConfig = field(default_factory=FeatureNetConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise ContractError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        if self.lam < 0:
            raise ContractError("lambda must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    train_accuracy: float
    wall_time: float


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)


class Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.lr * g


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _n_classes(dataset: Dataset, config: TrainConfig) -> int:
    seen = int(dataset.labels.max()) + 1 if len(dataset) else 0
    n = config.n_classes or max(seen, 2)
    if seen > n:
        raise ContractError(f"dataset has label {seen} but n_classes={n}")
    return n


def _init_precision(z) -> CholFactor:
    """Inverse of the sample covariance of every training row, identity if singular."""
    dim = z.shape[1]
    if len(z) > dim:
        cov = np.atleast_2d(np.cov(z, rowvar=False))
        if np.linalg.cond(cov) < 1e10:
            try:
                return CholFactor.from_matrix(np.linalg.inv(cov))
            except ContractError:
                pass
    return CholFactor.identity(dim)


def init_generative(z, labels, n_classes, rng) -> GenerativeParams:
    """Labeled class means and log-frequency priors; precision from all rows."""
    dim = z.shape[1]
    global_mean = z.mean(axis=0) if len(z) else np.zeros(dim)
    means = np.empty((n_classes, dim))
    counts = np.array([np.sum(labels == c) for c in range(n_classes)])
    for c in range(n_classes):
        if counts[c]:
            means[c] = z[labels == c].mean(axis=0)
        else:
            means[c] = global_mean + 0.01 * rng.standard_normal(dim)
    if np.all(counts > 0):
        mix_logits = np.log(counts / counts.sum())
    else:
        mix_logits = np.zeros(n_classes)
    return GenerativeParams(mix_logits, means, _init_precision(z))


def init_model(dataset: Dataset, config: TrainConfig, rng=None) -> HybridModel:
    """Zero softmax head, data-driven Gaussian head, optional fresh feature net."""
    rng = make_rng(config.seed) if rng is None else rng
    n_classes = _n_classes(dataset, config)
    net = None
    z = dataset.features
    if config.mode == "joint_ebm":
        fn = config.feature_net
        sizes = [dataset.dim, *fn.hidden, fn.out_dim or dataset.dim]
        net = MlpParams.init(sizes, fn.activation, rng)
        z = forward(dataset.features, net)[0] if len(dataset) else np.empty((0, sizes[-1]))
    gen = init_generative(z, dataset.labels, n_classes, rng)
    return HybridModel(DiscriminativeParams.zeros(n_classes, gen.dim), gen, net)


def _joint_step(model, x, labels, lam, buffer, sgld, rng):
    n = len(x)
    z, tape = forward(x, model.net)
    ce, grads, dz = cross_entropy_terms(z, labels, model.disc, n)
    g_ebm, contrast, _ = ebm_grad(x, labels, model, buffer, sgld, rng)
    for l, (dw, db) in enumerate(backward(tape, dz)[0]):
        g_ebm[f"net.{l}.weight"] = g_ebm[f"net.{l}.weight"] + dw
        g_ebm[f"net.{l}.bias"] = g_ebm[f"net.{l}.bias"] + db
    grads.update(g_ebm)
    grads["gen.mix_logits"] = np.zeros_like(model.gen.mix_logits)
    penalty = -coupling_log_prior(model.disc, model.gen, lam) / n
    if lam > 0:
        for k, g in coupling_grads(model.disc, model.gen, lam).items():
            grads[k] = grads[k] + g / n
    return LossBreakdown(ce, contrast, penalty), grads


def _labeled_accuracy(model, dataset):
    mask = dataset.labeled_mask
    if not np.any(mask):
        return float("nan")
    pred = np.argmax(model.predict_proba(dataset.features[mask]), axis=1)
    return float(np.mean(pred == dataset.labels[mask]))


def train(dataset: Dataset, config: TrainConfig, model: HybridModel | None = None):
    """Mini-batch optimisation of the hybrid objective.

    ``standalone_tractable`` uses the closed-form semi-supervised gradient.
    ``joint_ebm`` trains a feature net jointly and replaces the generative
    gradient by its SGLD contrastive estimate. Deterministic given
    ``config.seed``. Returns ``(model, history)``.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    rng = make_rng(config.seed)
    if model is None:
        model = init_model(dataset, config, rng)
    joint = config.mode == "joint_ebm"
    if joint and model.net is None:
        raise ContractError("joint_ebm mode needs a model with a feature net")
    params = {k: v.copy() for k, v in model.arrays().items()}
    model = model.with_arrays(params)
    opt = Sgd(config.learning_rate) if config.optimizer == "sgd" else Adam(config.learning_rate)
    buffer = None
    if joint and config.sgld.persistent:
        buffer = SampleBuffer.uniform(config.sgld.buffer_size, dataset.dim, config.sgld, rng)

    x_all, y_all = np.ascontiguousarray(dataset.features), dataset.labels
    n = len(dataset)
    batch = config.batch_size or n
    labeled = dataset.labeled_mask
    x_lab, y_lab = x_all[labeled], y_all[labeled]
    fused = None
    if not joint:
        keys = ("disc.weights", "disc.biases", "gen.mix_logits", "gen.means", "gen.precision")
        fused = {k: np.zeros_like(params[k]) for k in keys}
        inputs = [params[k] for k in keys]
    history = TrainHistory()
    start = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(n) if batch < n else np.arange(n)
        sums = np.zeros(3)
        for lo in range(0, n, batch):
            rows = order[lo : lo + batch] if batch < n else order
            x, y = (x_all[rows], y_all[rows]) if batch < n else (x_all, y_all)
            if joint:
                loss, grads = _joint_step(model, x, y, config.lam, buffer, config.sgld, rng)
            else:
                loss = LossBreakdown(*kernels.hybrid_loss_grad(x, y, *inputs, config.lam, *fused.values()))
                grads = fused
            if not np.isfinite(loss.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(epoch)
            opt.step(params, grads)
            if not np.all(np.isfinite(params["gen.precision"])):
                raise TrainingDiverged(epoch)
            if joint:
                model = model.with_arrays(params)
            sums += len(rows) * np.array([loss.cross_entropy, loss.generative_nll, loss.coupling_penalty])
        mean = sums / n
        if joint:
            acc = _labeled_accuracy(model, dataset)
        elif len(y_lab):
            scores = x_lab @ params["disc.weights"].T + params["disc.biases"]
            acc = float(np.mean(np.argmax(scores, axis=1) == y_lab))
        else:
            acc = float("nan")
        history.epochs.append(EpochRecord(epoch, LossBreakdown(*mean), acc, time.perf_counter() - start))
    model = model.with_arrays(params)
    return model.copy(), history


def evaluate(model: HybridModel, dataset: Dataset):
    """Accuracy of the softmax head and its per-sample posteriors."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    if np.any(dataset.labels < 0):
        raise ContractError("evaluation needs every sample labeled")
    if dataset.dim != model.input_dim:
        raise ContractError(f"dataset dim {dataset.dim} != model input dim {model.input_dim}")
    post = model.predict_proba(dataset.features)
    pred = np.argmax(post, axis=1)  # ties go to the lower index
    return float(np.mean(pred == dataset.labels)), post


def grad_check(model: HybridModel, x, labels, lam: float, tolerance: float = 1e-4, h: float = 1e-5) -> GradCheckReport:
    """Compare the closed-form semi-supervised gradient with central differences."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _, analytic = semi_supervised_loss(x, labels, model, lam)
    arrays = {k: v.copy() for k, v in model.arrays().items()}

    def loss(a):
        return semi_supervised_loss(x, labels, model.with_arrays(a), lam)[0].total

    numeric = central_differences(loss, arrays, h, skip=upper_triangle)
    return compare(analytic, numeric, tolerance)
