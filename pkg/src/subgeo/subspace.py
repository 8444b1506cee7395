"""Linear subspaces, principal angles and controlled subspace pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import PreconditionError
from .rng import stream

ORTHONORMAL_TOL = 1e-10


@dataclass(frozen=True)
class Subspace:
    """A k-dimensional subspace of R^d held as an orthonormal basis (d x k)."""

    basis: np.ndarray
    ambient_dim: int = field(init=False)

    def __post_init__(self):
        b = linalg.as_matrix(self.basis, "basis")
        d, k = b.shape
        if k > d:
            raise PreconditionError(f"basis has {k} columns in ambient dimension {d}")
        gram_err = np.abs(b.T @ b - np.eye(k)).max()
        if gram_err > ORTHONORMAL_TOL:
            raise PreconditionError(f"basis is not orthonormal (max |B^T B - I| = {gram_err:.3g})")
        b = b.copy()
        b.flags.writeable = False
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "ambient_dim", d)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def spanned_by(cls, vectors, energy_threshold: float = 1.0) -> "Subspace":
        return cls(linalg.orthonormal_basis(vectors, energy_threshold))

    def to_dict(self) -> dict:
        # column-major: all of column 0, then column 1, ...
        return {
            "ambient_dim": self.ambient_dim,
            "dim": self.dim,
            "basis": self.basis.T.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Subspace":
        d = int(data["ambient_dim"])
        flat = np.asarray(data["basis"], dtype=float)
        if flat.size % d:
            raise PreconditionError("basis length is not a multiple of ambient_dim")
        return cls(flat.reshape(-1, d).T)


@dataclass(frozen=True)
class AngleSpectrum:
    """Principal angles in radians, ascending."""

    angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float).ravel().copy()
        if np.any(a < 0) or np.any(a > math.pi / 2):
            raise PreconditionError("principal angles must lie in [0, pi/2]")
        if np.any(np.diff(a) < 0):
            raise PreconditionError("principal angles must be sorted ascending")
        a.flags.writeable = False
        object.__setattr__(self, "angles", a)

    def __len__(self) -> int:
        return self.angles.size

    @property
    def theta_min(self) -> float:
        return min_angle(self)

    def tolist(self) -> list[float]:
        return self.angles.tolist()


def principal_angles(s1: Subspace, s2: Subspace) -> AngleSpectrum:
    """Principal angles between two subspaces (Bjorck-Golub).

    Cosines are the singular values of ``B1.T @ B2``.  Angles whose cosine
    exceeds sqrt(1/2) are instead taken from the sines, i.e. the singular
    values of the component of the smaller basis orthogonal to the larger
    one, because arccos loses about half the digits near zero.
    """
    if s1.ambient_dim != s2.ambient_dim:
        raise PreconditionError(
            f"ambient dimension mismatch: {s1.ambient_dim} vs {s2.ambient_dim}"
        )
    b1, b2 = s1.basis, s2.basis
    cosines = np.clip(linalg.svd(b1.T @ b2).s, 0.0, 1.0)
    n = min(s1.dim, s2.dim)
    cosines = cosines[:n]

    small, large = (b1, b2) if s1.dim <= s2.dim else (b2, b1)
    residual = small - large @ (large.T @ small)
    sines = np.clip(linalg.svd(residual).s[::-1][:n], 0.0, 1.0)

    angles = np.where(cosines**2 >= 0.5, np.arcsin(sines), np.arccos(cosines))
    return AngleSpectrum(np.sort(np.clip(angles, 0.0, math.pi / 2)))


def min_angle(spec: AngleSpectrum) -> float:
    if len(spec) == 0:
        raise PreconditionError("empty angle spectrum")
    return float(spec.angles[0])


def interference(theta_min: float) -> float:
    """The separation factor 1 - cos^2(theta) = sin^2(theta)."""
    if not 0.0 <= theta_min <= math.pi / 2:
        raise PreconditionError(f"angle {theta_min} outside [0, pi/2]")
    return math.sin(theta_min) ** 2


def _check_angles(angles) -> np.ndarray:
    a = np.asarray(angles, dtype=float).ravel()
    if a.size == 0:
        raise PreconditionError("need at least one angle")
    if np.any(~np.isfinite(a)) or np.any(a <= 0) or np.any(a > math.pi / 2):
        raise PreconditionError("angles must lie in (0, pi/2]")
    return a


def mix_with_complement(u1: np.ndarray, complement: np.ndarray, angles) -> np.ndarray:
    """Column k of the result is ``u1[:, k] cos(a_k) + complement[:, k] sin(a_k)``."""
    a = _check_angles(angles)
    return u1 * np.cos(a) + complement * np.sin(a)


def generate_pair_with_angles(d: int, angles, seed: int) -> tuple[Subspace, Subspace]:
    """Two r-dimensional subspaces of R^d with prescribed principal angles.

    A Gaussian d x 2r draw is orthonormalized; the first r columns form U1 and
    the last r form V (orthogonal to U1).  Then U2 = U1 cos(angles) +
    V sin(angles) column-wise, so U1.T @ U2 = diag(cos(angles)).
    """
    a = _check_angles(angles)
    r = a.size
    if 2 * r > d:
        raise PreconditionError(f"need 2r <= d, got r={r}, d={d}")
    g = stream(seed, "subspace.pair").standard_normal((d, 2 * r))
    q, _ = linalg.qr(g)
    u1, v = q[:, :r], q[:, r:]
    return Subspace(u1), Subspace(mix_with_complement(u1, v, a))


def estimate_subspace(gradient_samples, energy_threshold: float = 0.99) -> Subspace:
    """Subspace spanned by the dominant left singular vectors of the samples.

    ``gradient_samples`` is d x k, one sample per column (matrix-valued
    gradients are concatenated column-wise by the caller).
    """
    g = linalg.as_matrix(gradient_samples, "gradient_samples")
    if not np.any(g):
        raise PreconditionError("all-zero gradient samples have no column space")
    return Subspace(linalg.orthonormal_basis(g, energy_threshold))
