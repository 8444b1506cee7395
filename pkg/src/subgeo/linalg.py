"""Dense linear algebra: Householder QR, one-sided Jacobi SVD, projections.

Matrices are plain 2-D ``float64`` numpy arrays; :func:`as_matrix` is the
single validation gate (shape, finiteness).  Nothing here is randomized, and
column signs are fixed so that the largest-magnitude entry of every Q column
and every left singular vector is positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, PreconditionError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
TRUNCATION_RTOL = 1e-12


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate and convert ``m`` to a finite, nonempty 2-D float array."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise PreconditionError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise PreconditionError(f"{name} must be nonempty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise PreconditionError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``m = u @ diag(s) @ v.T`` with ``s`` descending."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.s))


def _fix_signs(q: np.ndarray, *others: tuple[np.ndarray, int]) -> None:
    """Flip columns of ``q`` (and matching rows/cols of ``others``) in place."""
    idx = np.argmax(np.abs(q), axis=0)
    flip = q[idx, np.arange(q.shape[1])] < 0
    if not np.any(flip):
        return
    q[:, flip] *= -1.0
    for o, axis in others:
        if axis == 0:
            o[flip, :] *= -1.0
        else:
            o[:, flip] *= -1.0


def _householder(a: np.ndarray, full: bool = False) -> tuple[np.ndarray, np.ndarray]:
    a = np.array(a, dtype=float, copy=True)
    rows, cols = a.shape
    reflectors = []
    for j in range(min(rows, cols)):
        x = a[j:, j]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            reflectors.append(None)
            continue
        v = x.copy()
        v[0] += alpha if x[0] >= 0 else -alpha
        v /= np.linalg.norm(v)
        a[j:, j:] -= 2.0 * np.outer(v, v @ a[j:, j:])
        reflectors.append(v)
    width = rows if full else cols
    q = np.eye(rows, width)
    for j in reversed(range(len(reflectors))):
        v = reflectors[j]
        if v is not None:
            q[j:, :] -= 2.0 * np.outer(v, v @ q[j:, :])
    r = np.triu(a[:width, :])
    return q, r


def qr(m) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR by Householder reflections.

    Returns ``q`` (rows x cols, orthonormal columns) and upper-triangular ``r``
    (cols x cols).  Requires ``rows >= cols``.
    """
    a = as_matrix(m)
    if a.shape[0] < a.shape[1]:
        raise PreconditionError(
            f"qr needs rows >= cols, got {a.shape[0]}x{a.shape[1]}"
        )
    q, r = _householder(a)
    _fix_signs(q, (r, 0))
    return q + 0.0, r + 0.0


def orthogonal_complement(q: np.ndarray, count: int) -> np.ndarray:
    """``count`` orthonormal columns orthogonal to the orthonormal columns of ``q``."""
    rows = q.shape[0]
    if q.shape[1] == 0:
        return np.eye(rows, count)
    if q.shape[1] + count > rows:
        raise PreconditionError("complement does not fit in the ambient dimension")
    full, _ = _householder(q, full=True)
    comp = full[:, q.shape[1]:q.shape[1] + count].copy()
    # Re-orthogonalize once against q to clean up rounding.
    comp -= q @ (q.T @ comp)
    comp, _ = _householder(comp)
    return comp


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Circle-method tournament: n-1 rounds of disjoint column pairs."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        ps, qs = [], []
        for i in range(size // 2):
            a, b = players[i], players[size - 1 - i]
            if a >= 0 and b >= 0:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=int), np.array(qs, dtype=int)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi(work: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-sided (Hestenes) Jacobi on the columns of ``work``.

    Returns the orthogonalized columns and the accumulated rotation.
    """
    n = work.shape[1]
    v = np.eye(n)
    if n == 1:
        return work, v
    rounds = _round_robin(n)
    # Columns this small relative to the whole matrix end up truncated to
    # zero anyway; rotating them only burns sweeps.
    negligible = max((np.finfo(float).eps * np.linalg.norm(work)) ** 2, np.finfo(float).tiny)
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p, q in rounds:
            wp, wq = work[:, p], work[:, q]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            scale = np.sqrt(alpha * beta)
            active = (np.minimum(alpha, beta) > negligible) & (np.abs(gamma) > JACOBI_TOL * scale)
            if not np.any(active):
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta**2))
            c = 1.0 / np.sqrt(1.0 + t**2)
            s = c * t
            wp, wq = work[:, p], work[:, q]
            work[:, p] = c * wp - s * wq
            work[:, q] = s * wp + c * wq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            return work, v
    raise ConvergenceError("Jacobi SVD did not converge", JACOBI_MAX_SWEEPS)


def svd(m) -> SvdResult:
    """Thin SVD by one-sided Jacobi rotations.

    Tall inputs are first reduced with Householder QR so the rotations act on
    a square triangular factor.  Singular values below ``1e-12 * s_max`` are
    set to exactly zero; their left singular vectors are completed to an
    orthonormal set.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    if rows < cols:
        res = svd(a.T)
        return SvdResult(res.v, res.s, res.u)

    # work at unit scale so squared column norms neither underflow nor overflow
    amax = float(np.abs(a).max())
    if amax > 0:
        a = a / amax
    if rows > cols:
        q0, r0 = _householder(a)
        work, v = _jacobi(r0.copy())
    else:
        q0 = None
        work, v = _jacobi(a.copy())

    s = np.linalg.norm(work, axis=0)
    order = np.argsort(-s, kind="stable")
    s, work, v = s[order], work[:, order], v[:, order]
    s_max = s[0] if s.size else 0.0
    keep = s > TRUNCATION_RTOL * s_max if s_max > 0 else np.zeros_like(s, dtype=bool)
    k = int(np.count_nonzero(keep))
    u = np.empty_like(work)
    u[:, :k] = work[:, :k] / s[:k]
    s = np.where(keep, s * amax, 0.0)

    if k < cols:
        u[:, k:] = orthogonal_complement(u[:, :k], cols - k)
    if q0 is not None:
        u = q0 @ u
    _fix_signs(u, (v, 1))
    return SvdResult(u, s, v)


def orthonormal_basis(m, energy_threshold: float = 0.99) -> np.ndarray:
    """Leading left singular vectors holding ``energy_threshold`` of the energy.

    Energy is measured as the cumulative share of squared singular values.
    """
    res = svd(m)
    return res.u[:, :energy_rank(res.s, energy_threshold)].copy()


def energy_rank(s, energy_threshold: float) -> int:
    """Smallest k whose leading squared singular values reach the threshold share."""
    if not 0.0 < energy_threshold <= 1.0:
        raise PreconditionError(f"energy_threshold must be in (0, 1], got {energy_threshold}")
    s = np.asarray(s, dtype=float)
    energy = s**2
    if energy.sum() == 0.0:
        raise PreconditionError("no column space: matrix is zero")
    share = np.cumsum(energy) / energy.sum()
    k = int(np.searchsorted(share, energy_threshold - 1e-12)) + 1
    return min(k, int(np.count_nonzero(s)))


def project(basis, v) -> np.ndarray:
    """Orthogonal projection ``B @ B.T @ v`` onto the span of ``basis``.

    ``v`` may be a vector or a matrix whose columns are projected.
    """
    b = as_matrix(basis, "basis")
    x = np.asarray(v, dtype=float)
    if x.shape[0] != b.shape[0]:
        raise PreconditionError(
            f"dimension mismatch: basis has {b.shape[0]} rows, vector has {x.shape[0]}"
        )
    return b @ (b.T @ x)
