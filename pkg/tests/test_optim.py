import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dreamnet.errors import BadShape, RankDeficient
from dreamnet.gradcheck import TINY_CONFIG
from dreamnet.network import build, loss_and_grads
from dreamnet.optim import (
    OptimState,
    gram_residual,
    init_semi_orthogonal,
    qf,
    sgd_step,
    stiefel_project,
    stiefel_retract,
)

from conftest import random_spd


def tangency(w, z):
    return np.linalg.norm(w.T @ z + z.T @ w)


def test_init_square_and_tall():
    w = init_semi_orthogonal(4, 4, 0)
    assert np.linalg.norm(w.T @ w - np.eye(4)) <= 1e-12
    w = init_semi_orthogonal(5, 3, 0)
    assert np.linalg.norm(w.T @ w - np.eye(3)) <= 1e-12


def test_init_deterministic_and_r_diagonal():
    a, b = init_semi_orthogonal(6, 4, 9), init_semi_orthogonal(6, 4, 9)
    assert a.tobytes() == b.tobytes()
    g = np.random.default_rng(9).standard_normal((6, 4))
    assert np.all(np.diag(a.T @ g) > 0)  # R = Q^T G has a positive diagonal


def test_init_rejects_wide():
    with pytest.raises(BadShape):
        init_semi_orthogonal(3, 5, 0)


def test_project_normal_direction_vanishes():
    w = init_semi_orthogonal(5, 3, 1)
    np.testing.assert_allclose(stiefel_project(w, w), 0, atol=1e-15)


def test_project_tangent_unchanged_and_idempotent():
    rng = np.random.default_rng(29)
    w = init_semi_orthogonal(6, 4, rng)
    z = stiefel_project(w, rng.standard_normal((6, 4)))
    assert tangency(w, z) <= 1e-10
    np.testing.assert_allclose(stiefel_project(w, z), z, atol=1e-12)


def test_project_shape_errors():
    w = init_semi_orthogonal(5, 3, 1)
    with pytest.raises(BadShape):
        stiefel_project(w, np.zeros((3, 5)))
    with pytest.raises(BadShape):
        stiefel_project(w.T, w.T)


def test_retract_zero_step_and_square():
    rng = np.random.default_rng(2)
    w = init_semi_orthogonal(5, 3, rng)
    np.testing.assert_allclose(stiefel_retract(w, rng.standard_normal((5, 3)), 0.0), w, atol=1e-12)
    q = init_semi_orthogonal(4, 4, rng)
    q2 = stiefel_retract(q, stiefel_project(q, rng.standard_normal((4, 4))), 1e-3)
    assert np.linalg.norm(q2.T @ q2 - np.eye(4)) <= 1e-12


def test_retract_iterated_drift():
    rng = np.random.default_rng(4)
    w = init_semi_orthogonal(8, 5, rng)
    for _ in range(100):
        w = stiefel_retract(w, stiefel_project(w, rng.standard_normal(w.shape)), 0.01)
        assert gram_residual(w) <= 1e-10


def test_retract_second_order():
    rng = np.random.default_rng(6)
    w = init_semi_orthogonal(6, 3, rng)
    z = stiefel_project(w, rng.standard_normal((6, 3)))
    res = []
    for eta in (1e-2, 5e-3, 2.5e-3):
        res.append(np.sum((stiefel_retract(w, z, eta) - (w - eta * z)) ** 2))
    # squared residual is O(eta^4): halving eta divides it by about 16
    for a, b in zip(res, res[1:]):
        assert 12 < a / b < 20


def test_qf_rank_deficient():
    with pytest.raises(RankDeficient):
        qf(np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]]))


@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2**31))
def test_project_tangency_property(n, p, seed):
    n, p = max(n, p), min(n, p)
    rng = np.random.default_rng(seed)
    w = init_semi_orthogonal(n, p, rng)
    z = stiefel_project(w, rng.standard_normal((n, p)))
    assert tangency(w, z) <= 1e-10
    np.testing.assert_allclose(stiefel_project(w, z), z, atol=1e-12)


# ---------------------------------------------------------------- schedule and steps


def test_decay_schedule():
    state = OptimState(0.01, 0.9, 100)
    state.step = 250
    assert state.current_lr == pytest.approx(0.0081, abs=1e-15)
    assert OptimState().current_lr == 0.01


def test_optim_state_validation():
    with pytest.raises(ValueError):
        OptimState(lr=0)
    with pytest.raises(ValueError):
        OptimState(decay_factor=0.9)


def test_sgd_zero_grads():
    model = build(TINY_CONFIG)
    zeros = {n: np.zeros_like(p) for n, p in model.params.items()}
    state = OptimState()
    new = sgd_step(model, zeros, state)
    assert state.step == 1
    for name, p in model.params.items():
        if name.startswith("head."):
            assert new.params[name].tobytes() == p.tobytes()
        else:
            np.testing.assert_allclose(new.params[name], p, atol=1e-12)


def test_sgd_descends_at_small_lr():
    model = build(TINY_CONFIG)
    rng = np.random.default_rng(0)
    x = np.stack([random_spd(rng, 8) for _ in range(2)])
    y = np.array([0, 2])
    loss0, grads, _ = loss_and_grads(model, x, y)
    loss1, _, _ = loss_and_grads(sgd_step(model, grads, OptimState(lr=1e-4)), x, y)
    assert loss1 < loss0


def test_sgd_keeps_manifold():
    model = build(dataclasses.replace(TINY_CONFIG, seed=3))
    rng = np.random.default_rng(1)
    state = OptimState(lr=0.05)
    for _ in range(50):
        x = np.stack([random_spd(rng, 8) for _ in range(3)])
        _, grads, _ = loss_and_grads(model, x, rng.integers(0, 3, 3))
        model = sgd_step(model, grads, state)
    for name in model.stiefel_names:
        assert gram_residual(model.params[name]) <= 1e-10


def test_sgd_shape_error():
    model = build(TINY_CONFIG)
    with pytest.raises(BadShape):
        sgd_step(model, {"head.1": np.zeros((2, 2))}, OptimState())
