"""Compiled and numpy kernels must agree to rounding."""

import os
import subprocess
import sys

import numpy as np
import pytest

from roblogit import BACKEND
from roblogit._backend import get_kernels
from roblogit.losses import LossSpec
from roblogit.penalties import PenaltySpec

try:
    compiled = get_kernels("compiled")
except ImportError:  # extension not built
    compiled = None

python = get_kernels("python")

pytestmark = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")

LOSSES = [LossSpec.exp(), LossSpec.divergence(0.5), LossSpec.divergence(2.0), LossSpec.deviance()]
PENALTIES = [
    PenaltySpec("none"),
    PenaltySpec("lasso", 0.3),
    PenaltySpec("ridge", 0.3),
    PenaltySpec("elastic_net", 0.3, theta=0.4),
    PenaltySpec("scad", 0.3, a=3.7),
    PenaltySpec("mcp", 0.3, a=3.0),
]


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.mark.parametrize("loss", LOSSES, ids=lambda l: l.family.value + str(l.c))
def test_loss_arrays_agree(loss, rng):
    t = np.concatenate([rng.normal(scale=5, size=500), [-800.0, -40.0, 0.0, 40.0, 800.0]])
    y = (rng.random(t.size) < 0.5).astype(float)
    for name in ("loss_arrays", "chi_array"):
        a = getattr(compiled, name)(y, t, *loss.kernel_params)
        b = getattr(python, name)(y, t, *loss.kernel_params)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("loss", LOSSES, ids=lambda l: l.family.value + str(l.c))
def test_value_grad_agree(loss, rng):
    X = rng.normal(size=(300, 7))
    y = (rng.random(300) < 0.4).astype(float)
    beta = rng.normal(size=7)
    fa, ga = compiled.value_grad(X, y, beta, *loss.kernel_params)
    fb, gb = python.value_grad(X, y, beta, *loss.kernel_params)
    assert fa == pytest.approx(fb, rel=1e-13)
    np.testing.assert_allclose(ga, gb, rtol=1e-11, atol=1e-15)
    assert compiled.value_only(X, y, beta, *loss.kernel_params) == pytest.approx(fa, rel=1e-13)


@pytest.mark.parametrize("spec", PENALTIES, ids=lambda s: s.family.value)
@pytest.mark.parametrize("eta", [0.1, 1.0, 2.5])
def test_prox_agrees(spec, eta, rng):
    z = np.concatenate([rng.normal(scale=2, size=400), np.linspace(-3, 3, 61)])
    mask = (rng.random(z.size) < 0.8).astype(np.uint8)
    args = (eta, spec.kernel_code, spec.lam, spec.a, spec._enet_theta)
    np.testing.assert_allclose(compiled.prox(z, *args), python.prox(z, *args), rtol=1e-14, atol=1e-15)
    masked = compiled.prox(z, *args, mask)
    np.testing.assert_allclose(masked, python.prox(z, *args, mask), rtol=1e-14, atol=1e-15)
    assert np.array_equal(masked[mask == 0], z[mask == 0])


def test_read_only_inputs_accepted():
    t = np.linspace(-3, 3, 11)
    t.flags.writeable = False
    y = np.zeros(11)
    y.flags.writeable = False
    phi, _ = compiled.loss_arrays(y, t, *LossSpec.exp().kernel_params)
    assert np.all(np.isfinite(phi))


def test_environment_forces_fallback():
    env = dict(os.environ, ROBLOGIT_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import roblogit; print(roblogit.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
    assert BACKEND in ("compiled", "python")
