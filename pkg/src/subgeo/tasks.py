"""Synthetic continual-learning tasks with exactly known gradient subspaces.

Each task is the quadratic

    loss(W) = 1/2 * || diag(s) B^T (W - W*) ||_F^2

with B (d x r) an orthonormal basis of the task subspace.  Its gradient
B diag(s^2) B^T (W - W*) always lies in span(B), the Hessian is
B diag(s^2) B^T, so smoothness is s_1^2 and curvature (on the subspace) is
s_r^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import PreconditionError
from .rng import stream
from .subspace import AngleSpectrum, Subspace, generate_pair_with_angles, mix_with_complement, principal_angles


@dataclass(frozen=True)
class SyntheticTask:
    subspace: Subspace
    singular_values: np.ndarray
    target: np.ndarray
    noise_sigma: float = 0.0
    seed: int = 0
    ambient_noise: bool = False
    smoothness: float = field(init=False)
    curvature: float = field(init=False)

    def __post_init__(self):
        s = np.asarray(self.singular_values, dtype=float).ravel().copy()
        if s.size != self.subspace.dim:
            raise PreconditionError(
                f"{s.size} singular values for a {self.subspace.dim}-dimensional subspace"
            )
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise PreconditionError("singular values must be positive")
        if np.any(np.diff(s) > 0):
            raise PreconditionError("singular values must be sorted descending")
        target = linalg.as_matrix(self.target, "target").copy()
        if target.shape[0] != self.subspace.ambient_dim:
            raise PreconditionError(
                f"target has {target.shape[0]} rows, subspace lives in R^{self.subspace.ambient_dim}"
            )
        if self.noise_sigma < 0:
            raise PreconditionError("noise_sigma must be >= 0")
        s.flags.writeable = False
        target.flags.writeable = False
        object.__setattr__(self, "singular_values", s)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "smoothness", float(s[0] ** 2))
        object.__setattr__(self, "curvature", float(s[-1] ** 2))

    @property
    def shape(self) -> tuple[int, int]:
        return self.target.shape

    def _residual(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != self.target.shape:
            raise PreconditionError(f"weights have shape {w.shape}, task expects {self.target.shape}")
        return self.subspace.basis.T @ (w - self.target)

    def loss(self, w) -> float:
        r = self._residual(w) * self.singular_values[:, None]
        return 0.5 * float(np.sum(r * r))

    def gradient(self, w, rng: np.random.Generator | None = None) -> np.ndarray:
        """Analytic gradient, plus Gaussian noise when ``rng`` is given.

        Noise is projected onto the task subspace unless the task was built
        with ``ambient_noise=True``.
        """
        b = self.subspace.basis
        g = b @ (self._residual(w) * self.singular_values[:, None] ** 2)
        if self.noise_sigma > 0 and rng is not None:
            eps = self.noise_sigma * rng.standard_normal(g.shape)
            g = g + (eps if self.ambient_noise else b @ (b.T @ eps))
        return g

    def noise_stream(self, *labels) -> np.random.Generator:
        return stream(self.seed, "tasks.noise", *labels)

    def to_dict(self, embed_matrices: bool = False) -> dict:
        out = {
            "subspace_dim": self.subspace.dim,
            "singular_values": self.singular_values.tolist(),
            "noise_sigma": self.noise_sigma,
            "smoothness": self.smoothness,
            "curvature": self.curvature,
            "seed": self.seed,
        }
        if embed_matrices:
            out["subspace"] = self.subspace.to_dict()
            out["target"] = self.target.tolist()
        return out


def make_task(subspace: Subspace, singular_values, target, noise_sigma: float = 0.0,
              seed: int = 0, ambient_noise: bool = False) -> SyntheticTask:
    return SyntheticTask(subspace, singular_values, target, noise_sigma, seed, ambient_noise)


@dataclass(frozen=True)
class TaskSequence:
    tasks: tuple[SyntheticTask, ...]
    w0: np.ndarray
    pairwise_angles: tuple[AngleSpectrum, ...]
    prescribed_angles: tuple[float, ...] = ()

    @property
    def ambient_dim(self) -> int:
        return self.w0.shape[0]

    @property
    def output_dim(self) -> int:
        return self.w0.shape[1]

    def __len__(self) -> int:
        return len(self.tasks)

    def to_dict(self, embed_matrices: bool = False) -> dict:
        out = {
            "n_tasks": len(self.tasks),
            "ambient_dim": self.ambient_dim,
            "output_dim": self.output_dim,
            "prescribed_angles": list(self.prescribed_angles),
            "pairwise_angles": [spec.tolist() for spec in self.pairwise_angles],
            "tasks": [t.to_dict(embed_matrices) for t in self.tasks],
        }
        if embed_matrices:
            out["w0"] = self.w0.tolist()
        return out


def make_sequence(d: int = 64, m: int = 8, r: int = 4, consecutive_angles=(),
                  singular_values=None, target_scale: float = 1.0, noise_sigma: float = 0.0,
                  seed: int = 0, ambient_noise: bool = False) -> TaskSequence:
    """A chain of tasks whose consecutive subspaces meet at prescribed angles.

    Task t+1's basis is ``U_t cos(a_t) + V_t sin(a_t)``, with V_t a fresh
    random orthonormal block orthogonal to U_t, so every principal angle of
    the pair equals ``a_t``.  Targets are ``W0 + target_scale * U_t Z_t``
    with Z_t standard Gaussian (r x m).
    """
    angles = [float(a) for a in consecutive_angles]
    if d < 1 or m < 1 or r < 1:
        raise PreconditionError("d, m and r must be positive")
    if 2 * r > d:
        raise PreconditionError(f"need 2r <= d, got r={r}, d={d}")
    for a in angles:
        if not 0.0 < a <= math.pi / 2:
            raise PreconditionError(f"consecutive angle {a} outside (0, pi/2]")
    sv = np.ones(r) if singular_values is None else np.asarray(singular_values, dtype=float)
    n_tasks = len(angles) + 1

    w0 = stream(seed, "tasks.w0").standard_normal((d, m)) / math.sqrt(d)
    if angles:
        first, second = generate_pair_with_angles(d, [angles[0]] * r, seed)
        bases = [first.basis, second.basis]
    else:
        q, _ = linalg.qr(stream(seed, "tasks.first").standard_normal((d, r)))
        bases = [q]
    for t in range(1, len(angles)):
        u = bases[-1]
        g = stream(seed, "tasks.complement", t).standard_normal((d, r))
        g -= u @ (u.T @ g)
        g -= u @ (u.T @ g)
        v, _ = linalg.qr(g)
        bases.append(mix_with_complement(u, v, [angles[t]] * r))

    tasks = []
    for t, b in enumerate(bases):
        z = stream(seed, "tasks.target", t).standard_normal((r, m))
        target = w0 + target_scale * (b @ z)
        tasks.append(SyntheticTask(Subspace(b), sv, target, noise_sigma,
                                   seed=_task_seed(seed, t), ambient_noise=ambient_noise))
    pairwise = tuple(principal_angles(tasks[t].subspace, tasks[t + 1].subspace)
                     for t in range(n_tasks - 1))
    return TaskSequence(tuple(tasks), w0, pairwise, tuple(angles))


def _task_seed(seed: int, t: int) -> int:
    return int(stream(seed, "tasks.seed", t).integers(0, 2**63))
