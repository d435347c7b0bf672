import time

import numpy as np
import pytest

from helpers import fd_check_inputs
from weakseg.autodiff import ShapeError, Tensor
from weakseg.losses import (EPS, LossError, LossReport, bce_loss, combined_objective,
                            discriminator_loss, loss_d1, loss_d2, loss_g, loss_loc)

LN2 = np.log(2.0)


@pytest.mark.parametrize("fn", [loss_d1, loss_d2])
def test_discriminator_examples(fn):
    assert fn(np.array([1 - EPS]), np.array([EPS])).item() == pytest.approx(0.0, abs=1e-6)
    assert fn(np.array([0.5]), np.array([0.5])).item() == pytest.approx(2 * LN2)
    assert fn(np.array([EPS]), np.array([EPS])).item() == pytest.approx(-np.log(EPS), rel=1e-6)
    assert fn(np.array([0.0]), np.array([1.0])).item() == pytest.approx(-2 * np.log(EPS), rel=1e-6)


def test_discriminator_loss_is_permutation_invariant(rng):
    r, f = rng.random(6), rng.random(6)
    p = rng.permutation(6)
    assert discriminator_loss(r, f).item() == pytest.approx(discriminator_loss(r[p], f[p]).item())


def test_non_finite_inputs_raise():
    with pytest.raises(LossError):
        loss_d1(np.array([np.nan]), np.array([0.5]))
    with pytest.raises(LossError):
        loss_g(np.array([0.5]), None, np.inf)
    with pytest.raises(LossError):
        LossReport(l_d1=np.nan)


def test_loss_loc_examples(rng):
    y = (rng.random((2, 8, 8, 1)) > 0.5).astype(float)
    assert loss_loc(y, y, 0.7).item() == pytest.approx(0.0, abs=1e-6)
    half = np.full((8, 8), 0.5)
    assert loss_loc(half, y[0, ..., 0], 1.0).item() == pytest.approx(LN2)
    assert loss_loc(half, y[0, ..., 0], 0.5).item() == 0.5
    assert loss_loc(1 - y, y, 1.0).item() == 1.0


def test_loss_loc_bounds_on_random_triples():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    for i in range(1000):
        shape = (int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        y_tilde = (rng.random(shape) > rng.random()).astype(float)
        mode = i % 4
        if mode == 0:
            y_hat = rng.random(shape)
        elif mode == 1:
            y_hat = 1.0 - y_tilde                      # exact opposite
        elif mode == 2:
            y_hat = np.where(y_tilde > 0, 0.0, 1.0)    # confident and wrong, unclamped
        else:
            y_hat = np.clip(y_tilde + rng.normal(0, 0.3, shape), 0, 1)
        rho = float(rng.uniform(1e-3, 20.0))
        v = loss_loc(y_hat, y_tilde, rho).item()
        assert 0.0 <= v <= rho
    assert time.perf_counter() - start < 5


def test_loss_loc_errors():
    with pytest.raises(ShapeError):
        loss_loc(np.zeros((4, 4)), np.zeros((4, 5)), 0.7)
    with pytest.raises(ValueError):
        loss_loc(np.zeros((4, 4)), np.zeros((4, 4)), 0.0)


def test_loss_g_examples():
    half = np.array([0.5, 0.5])
    assert loss_g(half, half, 0.0, saturating=True).item() == pytest.approx(-2 * LN2)
    assert loss_g(half, half, 0.0).item() == pytest.approx(2 * LN2)
    a, b = np.array([0.3, 0.8]), np.array([0.6])
    for sat in (True, False):
        diff = loss_g(a, b, 0.42, saturating=sat).item() - loss_g(a, b, 0.0, saturating=sat).item()
        assert diff == pytest.approx(0.42)
    assert loss_g(a, None, 0.0).item() == pytest.approx(-np.mean(np.log(a)))


def test_gradients_match_finite_differences(rng):
    p, q = rng.uniform(0.1, 0.9, 5), rng.uniform(0.1, 0.9, 5)
    y_tilde = (rng.random((4, 4)) > 0.5).astype(float)
    y_hat = rng.uniform(0.1, 0.9, (4, 4))
    assert fd_check_inputs(lambda a, b: discriminator_loss(a, b), [p, q], rng) < 1e-4
    assert fd_check_inputs(lambda a, b: loss_g(a, b, 0.1), [p, q], rng) < 1e-4
    assert fd_check_inputs(lambda a, b: loss_g(a, b, 0.1, saturating=True), [p, q], rng) < 1e-4
    assert fd_check_inputs(lambda a: loss_loc(a, y_tilde, 10.0), [y_hat], rng) < 1e-4
    assert fd_check_inputs(lambda a: bce_loss(a, y_tilde), [y_hat], rng) < 1e-4


def test_capped_localization_has_no_gradient():
    y = Tensor(np.full((3, 3), 0.01), requires_grad=True)
    loss_loc(y, np.ones((3, 3)), 0.7).backward()
    assert not y.grad.any()


def test_combined_objective():
    assert combined_objective(LossReport()) == 0.0
    assert combined_objective(LossReport(l_d1=1, l_d2=2, l_g_adv=3, l_loc=0.5)) == 6.5
    r = LossReport(0.3, 0.2, 1.1, 0.4, 1.5)
    assert combined_objective(r) == pytest.approx(sum([r.l_d1, r.l_d2, r.l_g_adv, r.l_loc]))
