"""Trainable state: both heads of the layer plus an optional feature net."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layer import DiscriminativeParams, GenerativeParams, posterior_disc
from .mlp import MlpParams, forward
from .numerics import CholFactor


@dataclass
class HybridModel:
    disc: DiscriminativeParams
    gen: GenerativeParams
    net: MlpParams | None = None

    @property
    def n_classes(self) -> int:
        return self.disc.n_classes

    @property
    def feature_dim(self) -> int:
        return self.disc.dim

    @property
    def input_dim(self) -> int:
        if self.net is not None and self.net.depth:
            return self.net.in_dim
        return self.disc.dim

    def features(self, x) -> np.ndarray:
        if self.net is None:
            return np.asarray(x, dtype=np.float64)
        return forward(x, self.net)[0]

    def predict_proba(self, x) -> np.ndarray:
        return posterior_disc(self.features(x), self.disc)

    def arrays(self) -> dict[str, np.ndarray]:
        """Named views of every trainable array (shared, not copied)."""
        out = {
            "disc.weights": self.disc.weights,
            "disc.biases": self.disc.biases,
            "gen.mix_logits": self.gen.mix_logits,
            "gen.means": self.gen.means,
            "gen.precision": self.gen.precision.raw,
        }
        if self.net is not None:
            for l, (w, b) in enumerate(zip(self.net.weights, self.net.biases)):
                out[f"net.{l}.weight"] = w
                out[f"net.{l}.bias"] = b
        return out

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "HybridModel":
        """New model with the same structure and the given arrays."""
        disc = DiscriminativeParams(arrays["disc.weights"], arrays["disc.biases"])
        gen = GenerativeParams(
            arrays["gen.mix_logits"], arrays["gen.means"], CholFactor(np.tril(arrays["gen.precision"]))
        )
        net = None
        if self.net is not None:
            depth = self.net.depth
            net = MlpParams(
                [arrays[f"net.{l}.weight"] for l in range(depth)],
                [arrays[f"net.{l}.bias"] for l in range(depth)],
                list(self.net.activations),
            )
        return HybridModel(disc, gen, net)

    def copy(self) -> "HybridModel":
        return self.with_arrays({k: v.copy() for k, v in self.arrays().items()})
