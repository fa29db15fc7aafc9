import numpy as np
import pytest

from fame import kernels
from fame.model import VARIANTS, ModelSpec, forward_batch
from fame.training import LossConfig, random_model, value_and_grad

compiled = pytest.mark.skipif(kernels.compiled is None, reason="compiled kernels not built")


def test_get_backends():
    assert kernels.get("numpy") is kernels.reference
    assert kernels.get() is kernels.default
    with pytest.raises(ValueError):
        kernels.get("fortran")


def test_reference_keeps_longdouble(rng):
    model = random_model(ModelSpec(variant="FAME", P=3, D=2, M=4), rng).astype(np.longdouble)
    preds, _ = forward_batch(model, rng.normal(size=(5, 4)).astype(np.longdouble), kernels.reference)
    assert preds.dtype == np.longdouble


@compiled
@pytest.mark.parametrize("variant", VARIANTS)
def test_backends_agree(variant, rng):
    model = random_model(ModelSpec(variant=variant, P=5, D=3, M=7), rng)
    X, y = rng.normal(size=(64, 7)), rng.normal(size=64)
    a, ca = forward_batch(model, X, kernels.reference)
    b, cb = forward_batch(model, X, kernels.compiled)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(ca, cb, rtol=1e-12, atol=1e-13)
    for kind in ("L2", "LF"):
        la, ga = value_and_grad(model, X, y, LossConfig(kind, 0.05), kernels.reference)
        lb, gb = value_and_grad(model, X, y, LossConfig(kind, 0.05), kernels.compiled)
        assert la == pytest.approx(lb, rel=1e-12)
        np.testing.assert_allclose(ga, gb, rtol=1e-9, atol=1e-12)


@compiled
def test_backends_agree_far_from_centers(rng):
    # tiny grades everywhere: exercises the max-shift and the denominator guard
    model = random_model(ModelSpec(variant="DR-MFLS", P=5, D=4, M=6), rng)
    X = rng.normal(size=(32, 6)) * 20
    np.testing.assert_allclose(
        forward_batch(model, X, kernels.reference)[0], forward_batch(model, X, kernels.compiled)[0], rtol=1e-11
    )
