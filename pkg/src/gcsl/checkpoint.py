"""Versioned JSON checkpoints.

Layout::

    {"format": "gcsl-checkpoint", "version": 1,
     "config": {...},                       # echo of the run config, free-form
     "structure": {"n_classes": C, "feature_dim": D,
                   "net_activations": [...] | null},
     "arrays": {name: {"shape": [...], "data": [row-major floats]}}}

Array names are those of ``HybridModel.arrays()``. Floats are written with
``repr`` precision so a save/load round trip is exact.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .data import _atomic_write
from .errors import ContractError
from .layer import DiscriminativeParams, GenerativeParams
from .mlp import MlpParams
from .model import HybridModel
from .numerics import CholFactor

FORMAT = "gcsl-checkpoint"
VERSION = 1


def to_dict(model: HybridModel, config=None) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "config": config or {},
        "structure": {
            "n_classes": model.n_classes,
            "feature_dim": model.feature_dim,
            "net_activations": None if model.net is None else list(model.net.activations),
        },
        "arrays": {
            name: {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}
            for name, a in model.arrays().items()
        },
    }


def from_dict(doc: dict) -> HybridModel:
    if doc.get("format") != FORMAT:
        raise ContractError("not a gcsl checkpoint")
    if doc.get("version") != VERSION:
        raise ContractError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        arrays = {
            name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in doc["arrays"].items()
        }
        acts = doc["structure"]["net_activations"]
        disc = DiscriminativeParams(arrays["disc.weights"], arrays["disc.biases"])
        gen = GenerativeParams(arrays["gen.mix_logits"], arrays["gen.means"], CholFactor(arrays["gen.precision"]))
        net = None
        if acts is not None:
            depth = sum(1 for k in arrays if k.startswith("net.") and k.endswith(".weight"))
            net = MlpParams(
                [arrays[f"net.{l}.weight"] for l in range(depth)],
                [arrays[f"net.{l}.bias"] for l in range(depth)],
                list(acts),
            )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ContractError):
            raise
        raise ContractError(f"malformed checkpoint: {exc}") from exc
    return HybridModel(disc, gen, net)


def save(model: HybridModel, path, config=None):
    _atomic_write(path, json.dumps(to_dict(model, config)) + "\n")


def load(path) -> HybridModel:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ContractError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(doc)


def load_config(path) -> dict:
    with open(os.fspath(path), encoding="utf-8") as fh:
        return json.load(fh).get("config", {})
