import math

import numpy as np
import pytest

from subgeo.errors import PreconditionError
from subgeo.subspace import Subspace, principal_angles
from subgeo.tasks import SyntheticTask, make_sequence, make_task

from conftest import orthonormal


def _task(rng, d=12, m=3, r=3, sv=(2.0, 1.0, 0.5), **kw):
    return make_task(Subspace(orthonormal(rng, d, r)), sv, rng.standard_normal((d, m)), **kw)


def test_gradient_matches_finite_differences(rng):
    task = _task(rng)
    w = rng.standard_normal(task.shape)
    g = task.gradient(w)
    h = 1e-6
    fd = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        e = np.zeros_like(w)
        e[idx] = h
        fd[idx] = (task.loss(w + e) - task.loss(w - e)) / (2 * h)
    np.testing.assert_allclose(g, fd, atol=1e-7)


def test_gradient_in_subspace(rng):
    task = _task(rng)
    g = task.gradient(rng.standard_normal(task.shape))
    b = task.subspace.basis
    np.testing.assert_allclose(g - b @ (b.T @ g), 0, atol=1e-13)


def test_loss_minimum_and_constants(rng):
    task = _task(rng)
    assert task.loss(task.target) == 0.0
    assert task.smoothness == 4.0 and task.curvature == 0.25
    # Hessian eigenvalues on the subspace are s^2
    b = task.subspace.basis
    w = task.target + np.outer(b[:, 1], np.ones(3)) * 0.1
    assert task.loss(w) == pytest.approx(0.5 * 1.0 * 0.01 * 3)


def test_noise_projected_unless_ambient(rng):
    task = _task(rng, noise_sigma=0.5)
    w = rng.standard_normal(task.shape)
    g = task.gradient(w, np.random.default_rng(0))
    b = task.subspace.basis
    np.testing.assert_allclose(g - b @ (b.T @ g), 0, atol=1e-13)
    amb = _task(np.random.default_rng(1), noise_sigma=0.5, ambient_noise=True)
    g2 = amb.gradient(w, np.random.default_rng(0))
    b2 = amb.subspace.basis
    assert np.linalg.norm(g2 - b2 @ (b2.T @ g2)) > 0.1


@pytest.mark.parametrize("kw", [
    {"sv": (1.0, 2.0, 3.0)},
    {"sv": (1.0, 0.0, 0.0)},
    {"sv": (1.0, 1.0)},
    {"noise_sigma": -1.0},
])
def test_task_validation(rng, kw):
    with pytest.raises(PreconditionError):
        _task(rng, **kw)


def test_shape_mismatch(rng):
    task = _task(rng)
    with pytest.raises(PreconditionError):
        task.loss(np.zeros((3, 3)))


def test_sequence_angles_exact():
    seq = make_sequence(d=40, m=4, r=3, consecutive_angles=[0.2, 1.1, 0.7, 1.5], seed=4)
    assert len(seq) == 5
    for t, a in enumerate([0.2, 1.1, 0.7, 1.5]):
        np.testing.assert_allclose(seq.pairwise_angles[t].angles, [a] * 3, atol=1e-12)
        np.testing.assert_allclose(
            principal_angles(seq.tasks[t].subspace, seq.tasks[t + 1].subspace).angles, a, atol=1e-12)


def test_sequence_deterministic_and_seeded():
    a = make_sequence(d=16, m=2, r=2, consecutive_angles=[0.5], seed=1)
    b = make_sequence(d=16, m=2, r=2, consecutive_angles=[0.5], seed=1)
    c = make_sequence(d=16, m=2, r=2, consecutive_angles=[0.5], seed=2)
    np.testing.assert_array_equal(a.tasks[1].target, b.tasks[1].target)
    np.testing.assert_array_equal(a.w0, b.w0)
    assert not np.array_equal(a.w0, c.w0)


def test_sequence_common_random_numbers():
    # same seed, different angle: first task and W0 are shared
    a = make_sequence(d=16, m=2, r=2, consecutive_angles=[0.3], seed=5)
    b = make_sequence(d=16, m=2, r=2, consecutive_angles=[1.2], seed=5)
    np.testing.assert_array_equal(a.tasks[0].subspace.basis, b.tasks[0].subspace.basis)
    np.testing.assert_array_equal(a.w0, b.w0)


def test_sequence_serialization():
    seq = make_sequence(d=8, m=2, r=2, consecutive_angles=[0.5], seed=0)
    small = seq.to_dict()
    assert "w0" not in small and small["n_tasks"] == 2
    full = seq.to_dict(embed_matrices=True)
    assert np.array_equal(np.array(full["w0"]), seq.w0)
    back = Subspace.from_dict(full["tasks"][1]["subspace"])
    np.testing.assert_array_equal(back.basis, seq.tasks[1].subspace.basis)


@pytest.mark.parametrize("kw", [{"r": 5, "d": 8}, {"consecutive_angles": [0.0]},
                                {"consecutive_angles": [1.7]}, {"m": 0}])
def test_sequence_rejects(kw):
    with pytest.raises(PreconditionError):
        make_sequence(**kw)


def test_single_task_sequence():
    seq = make_sequence(d=8, m=2, r=2, seed=0)
    assert len(seq) == 1 and seq.pairwise_angles == ()


def test_first_order_term_vanishes(rng):
    # a perturbation orthogonal to the task subspace leaves the loss unchanged
    task = _task(rng, d=20, m=4, r=3)
    b = task.subspace.basis
    w = rng.standard_normal(task.shape)
    delta = rng.standard_normal(task.shape)
    delta -= b @ (b.T @ delta)
    assert abs(task.loss(w + delta) - task.loss(w)) < 1e-10
    assert abs(np.sum(task.gradient(w) * delta)) < 1e-12


def test_closed_form_losses(rng):
    task = _task(rng)
    b = task.subspace.basis
    np.testing.assert_array_equal(task.gradient(task.target), 0)
    v = rng.standard_normal(12)
    v -= b @ (b.T @ v)
    e = np.zeros(3)
    e[0] = 1
    assert task.loss(task.target + np.outer(v, e)) == pytest.approx(0, abs=1e-28)
    assert task.loss(task.target + np.outer(b[:, 0], e)) == pytest.approx(0.5 * 2.0**2)


def test_gradient_relative_fd_h1e5(rng):
    task = _task(rng)
    w = rng.standard_normal(task.shape)
    h = 1e-5
    fd = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        e = np.zeros_like(w)
        e[idx] = h
        fd[idx] = (task.loss(w + e) - task.loss(w - e)) / (2 * h)
    g = task.gradient(w)
    assert np.linalg.norm(fd - g) / np.linalg.norm(g) <= 1e-6


def test_noise_monte_carlo(rng):
    task = _task(rng, noise_sigma=0.01)
    w = rng.standard_normal(task.shape)
    exact = task.gradient(w)
    gen = np.random.default_rng(7)
    mean = np.mean([task.gradient(w, gen) for _ in range(1000)], axis=0)
    assert np.all(np.abs(mean - exact) <= 3 * 0.01 / math.sqrt(1000) + 1e-15)
    noiseless = _task(rng)
    g = noiseless.gradient(w, gen)
    b = noiseless.subspace.basis
    assert np.linalg.norm(g - b @ (b.T @ g)) <= 1e-10


def test_sequence_angle_examples():
    seq = make_sequence(d=16, m=2, r=2, consecutive_angles=[math.pi / 2], seed=0)
    assert seq.pairwise_angles[0].theta_min == pytest.approx(math.pi / 2, abs=1e-8)
    seq = make_sequence(d=16, m=2, r=2, consecutive_angles=[0.4, 1.2], seed=0)
    assert [p.theta_min for p in seq.pairwise_angles] == pytest.approx([0.4, 1.2], abs=1e-8)
