import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gclrec import autodiff as ad

settings.register_profile(
    "ci",
    max_examples=25,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


def set_param(param: ad.Tensor, values: np.ndarray) -> None:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    param.data = arr


def numeric_grad(param: ad.Tensor, forward, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued forward() wrt param."""
    base = param.data.copy()
    grad = np.zeros_like(base)
    for idx in np.ndindex(*base.shape):
        plus = base.copy()
        plus[idx] += h
        set_param(param, plus)
        up = forward().item()
        minus = base.copy()
        minus[idx] -= h
        set_param(param, minus)
        down = forward().item()
        grad[idx] = (up - down) / (2.0 * h)
    set_param(param, base)
    return grad


def analytic_grad(param: ad.Tensor, forward) -> np.ndarray:
    param.grad = None
    with ad.Tape() as tape:
        loss = forward()
    ad.backward(tape, loss)
    assert param.grad is not None, "parameter did not receive a gradient"
    return param.grad.copy()


def assert_grad_close(param: ad.Tensor, forward, rtol: float = 1e-4, atol: float = 1e-7):
    got = analytic_grad(param, forward)
    want = numeric_grad(param, forward)
    np.testing.assert_allclose(got, want, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
