import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import gcsl
from gcsl import _kernels_py
from gcsl.objectives import semi_supervised_loss

from builders import random_batch, random_model

core = pytest.importorskip("gcsl._core")
seeds = st.integers(0, 2**32 - 1)


def backend_in_subprocess(value):
    env = dict(os.environ)
    if value is None:
        env.pop("GCSL_BACKEND", None)
    else:
        env["GCSL_BACKEND"] = value
    out = subprocess.run([sys.executable, "-c", "import gcsl; print(gcsl.BACKEND)"], env=env,
                         capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_backend_selection():
    assert backend_in_subprocess(None) == "cython"
    assert backend_in_subprocess("python") == "python"
    assert gcsl.BACKEND in ("cython", "python")


def _problem(rng, n, d, c):
    a = rng.standard_normal((d, d))
    lower = np.ascontiguousarray(np.linalg.cholesky(a @ a.T / d + np.eye(d)))
    return rng.standard_normal((n, d)), rng.standard_normal((c, d)), lower


@given(seeds, st.integers(1, 6), st.integers(1, 4), st.integers(-1, 2))
def test_energy_grad_agrees(seed, d, c, cls):
    rng = np.random.default_rng(seed)
    x, means, lower = _problem(rng, 7, d, c)
    cls = cls if cls < c else -1
    e1, g1 = core.mixture_energy_grad(x, means, lower, cls)
    e2, g2 = _kernels_py.mixture_energy_grad(x, means, lower, cls)
    np.testing.assert_allclose(e1, e2, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-11, atol=1e-12)


@given(seeds, st.booleans(), st.integers(-1, 1))
def test_sgld_agrees(seed, clip, cls):
    rng = np.random.default_rng(seed)
    x, means, lower = _problem(rng, 5, 3, 2)
    noise = 0.2 * rng.standard_normal((30, 5, 3))
    lo, hi = -np.ones(3), np.ones(3)
    xa, xb = x.copy(), x.copy()
    ta, tb = np.empty_like(noise), np.empty_like(noise)
    ra = core.mixture_sgld(xa, means, lower, 0.3, noise, lo, hi, clip, cls, ta)
    rb = _kernels_py.mixture_sgld(xb, means, lower, 0.3, noise, lo, hi, clip, cls, tb)
    assert ra == rb == -1
    np.testing.assert_allclose(ta, tb, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(xa, xb, rtol=1e-10, atol=1e-12)


def test_sgld_divergence_step_agrees():
    x = np.ones((1, 1))
    noise = np.zeros((2000, 1, 1))
    args = (np.zeros((1, 1)), np.eye(1), 10.0, noise, -np.ones(1), np.ones(1), False, -1, None)
    assert core.mixture_sgld(x.copy(), *args) == _kernels_py.mixture_sgld(x.copy(), *args) > 0


@given(seeds, st.integers(1, 4), st.integers(1, 4), st.integers(1, 12), st.sampled_from([0.0, 0.5, 10.0]))
def test_fused_loss_agrees(seed, c, d, n, lam):
    rng = np.random.default_rng(seed)
    m = random_model(rng, c, d)
    x, y = random_batch(rng, n, d, c, unlabeled=0.5)
    loss, grads = semi_supervised_loss(x, y, m, lam)
    keys = ("disc.weights", "disc.biases", "gen.mix_logits", "gen.means", "gen.precision")
    arrays = m.arrays()
    for kern in (core, _kernels_py):
        out = [np.zeros_like(arrays[k]) for k in keys]
        vals = kern.hybrid_loss_grad(np.ascontiguousarray(x), y.astype(np.int64), *(arrays[k] for k in keys),
                                     lam, *out)
        np.testing.assert_allclose(vals, [loss.cross_entropy, loss.generative_nll, loss.coupling_penalty],
                                   rtol=1e-11, atol=1e-12)
        for k, g in zip(keys, out):
            want = np.tril(grads[k]) if k == "gen.precision" else grads[k]
            np.testing.assert_allclose(g, want, rtol=1e-9, atol=1e-11, err_msg=k)


def test_training_matches_across_backends():
    code = (
        "import numpy as np, gcsl\n"
        "from gcsl.data import gen_two_gaussians, apply_mask, MaskRule\n"
        "from gcsl.trainer import train, TrainConfig\n"
        "tr, _ = gen_two_gaussians(100, 0, 1)\n"
        "m, _ = train(apply_mask(tr, MaskRule('extremal_y', 5)), TrainConfig(epochs=200))\n"
        "print(repr(m.gen.means.ravel().tolist()))\n"
    )
    outs = []
    for value in (None, "python"):
        env = dict(os.environ)
        env.pop("GCSL_BACKEND", None)
        if value:
            env["GCSL_BACKEND"] = value
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        outs.append(np.array(eval(res.stdout)))
    np.testing.assert_allclose(outs[0], outs[1], rtol=1e-8, atol=1e-10)
