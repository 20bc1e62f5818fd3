"""Dense linear algebra and random-number primitives.

The shared precision matrix is stored as a lower-triangular Cholesky factor
whose diagonal is kept in log-space, so any real-valued update keeps the
encoded matrix symmetric positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ContractError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class CholFactor:
    """Factor ``L`` of an SPD matrix ``L @ L.T``.

    ``raw`` is a ``(D, D)`` array whose strict lower triangle holds the
    off-diagonal entries of ``L`` and whose diagonal holds ``log(L_ii)``.
    Entries above the diagonal are ignored.
    """

    raw: np.ndarray

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        if self.raw.ndim != 2 or self.raw.shape[0] != self.raw.shape[1]:
            raise ContractError(f"CholFactor needs a square array, got {self.raw.shape}")
        if not np.all(np.isfinite(self.raw)):
            raise ContractError("CholFactor entries must be finite")

    @property
    def dim(self) -> int:
        return self.raw.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "CholFactor":
        return cls(np.zeros((dim, dim)))

    @classmethod
    def from_lower(cls, lower) -> "CholFactor":
        lower = np.asarray(lower, dtype=np.float64)
        diag = np.diag(lower)
        if np.any(diag <= 0):
            raise ContractError("Cholesky factor needs a strictly positive diagonal")
        raw = np.tril(lower, -1)
        raw[np.diag_indices_from(raw)] = np.log(diag)
        return cls(raw)

    @classmethod
    def from_matrix(cls, spd) -> "CholFactor":
        """Factor an SPD matrix; raises ContractError if it is not SPD."""
        try:
            lower = np.linalg.cholesky(np.asarray(spd, dtype=np.float64))
        except np.linalg.LinAlgError as exc:
            raise ContractError("matrix is not symmetric positive definite") from exc
        return cls.from_lower(lower)

    def lower(self) -> np.ndarray:
        lower = np.tril(self.raw, -1)
        lower[np.diag_indices_from(lower)] = np.exp(np.diag(self.raw))
        return lower

    def matrix(self) -> np.ndarray:
        lower = self.lower()
        return lower @ lower.T

    def logdet(self) -> float:
        return 2.0 * float(np.trace(self.raw))


def _check_dim(factor: CholFactor, v: np.ndarray):
    if v.shape[-1] != factor.dim:
        raise ContractError(f"dimension mismatch: factor {factor.dim}, vector {v.shape[-1]}")


def factor_grad(grad_lower: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """Map a dense gradient w.r.t. ``L`` onto ``CholFactor.raw`` (log-diagonal storage)."""
    g = np.tril(grad_lower)
    idx = np.diag_indices_from(g)
    g[idx] = g[idx] * lower[idx]
    return g


def cholesky_solve(factor: CholFactor, v) -> np.ndarray:
    """Apply the encoded matrix: returns ``(L L^T) v``.

    The factor encodes the precision directly, so this is a multiply.
    ``v`` may be a single vector or a batch of row vectors.
    """
    v = np.asarray(v, dtype=np.float64)
    _check_dim(factor, v)
    lower = factor.lower()
    return (v @ lower) @ lower.T


def covariance_apply(factor: CholFactor, v) -> np.ndarray:
    """Solve ``(L L^T) u = v``, i.e. multiply by the covariance."""
    v = np.asarray(v, dtype=np.float64)
    _check_dim(factor, v)
    lower = factor.lower()
    rhs = v.T if v.ndim > 1 else v
    y = solve_triangular(lower, rhs, lower=True)
    u = solve_triangular(lower.T, y, lower=False)
    return u.T if v.ndim > 1 else u


def log_sum_exp(values, axis=None):
    """Overflow-safe ``log(sum(exp(values)))``."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ContractError("log_sum_exp of an empty array")
    vmax = np.max(values, axis=axis, keepdims=True)
    vmax = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):  # all -inf gives -inf
        out = np.log(np.sum(np.exp(values - vmax), axis=axis, keepdims=True)) + vmax
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax(scores, axis=-1):
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - np.max(scores, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(scores, axis=-1):
    scores = np.asarray(scores, dtype=np.float64)
    return scores - np.expand_dims(log_sum_exp(scores, axis=axis), axis)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; same seed gives the same stream."""
    return np.random.Generator(np.random.Philox(int(seed)))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent child streams, e.g. one per SGLD chain."""
    return rng.spawn(n)


def gaussian_noise(rng: np.random.Generator, n, std: float) -> np.ndarray:
    if std < 0:
        raise ContractError(f"noise std must be >= 0, got {std}")
    draws = rng.standard_normal(n)
    return draws * std
