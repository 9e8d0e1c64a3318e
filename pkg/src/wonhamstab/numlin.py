"""Small dense linear-algebra kernel.

Everything here works on tiny matrices (d up to a few dozen), so the
choices favour accuracy and predictable tolerances over speed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
import scipy.linalg

DEFAULT_RANK_TOL = 1e-9
DEFAULT_HURWITZ_MARGIN = 1e-9


class NonFinite(ArithmeticError):
    """A matrix computation produced or received inf/NaN."""


class EigenFailure(ArithmeticError):
    """The dense eigenvalue solver did not converge."""


def expm(M, t: float = 1.0) -> np.ndarray:
    """Return exp(M t).

    Scaling and squaring with a degree-13 Pade approximant (scipy's
    implementation). ``t == 0`` returns the identity exactly.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expm needs a square matrix, got shape {M.shape}")
    if t < 0:
        raise ValueError("expm is only used for t >= 0")
    if not np.all(np.isfinite(M)) or not np.isfinite(t):
        raise NonFinite("non-finite input to expm")
    if t == 0:
        return np.eye(M.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        out = scipy.linalg.expm(M * t)
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"expm overflowed (|M|max={np.abs(M).max():.3g}, t={t})")
    return out


def numerical_rank(M, tol_rel: float = DEFAULT_RANK_TOL, scale: float = 0.0) -> int:
    """Count singular values above ``tol_rel * max(s_max, scale)``.

    ``scale`` anchors the threshold when M is a small block of a larger
    operator, so that pure roundoff is not mistaken for a direction.
    """
    M = np.asarray(M)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    ref = max(float(s[0]), float(scale))
    if ref == 0.0:
        return 0
    return int(np.count_nonzero(s > tol_rel * ref))


class HurwitzCheck(NamedTuple):
    is_hurwitz: bool
    max_real_part: float


def is_hurwitz(M, margin: float = DEFAULT_HURWITZ_MARGIN) -> HurwitzCheck:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise ValueError(f"is_hurwitz needs a non-empty square matrix, got {M.shape}")
    try:
        eig = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    top = float(np.max(eig.real))
    return HurwitzCheck(top < -margin, top)


@dataclass(frozen=True)
class Subspace:
    """Linear subspace of R^d held as a d x k matrix with orthonormal columns."""

    ambient_dim: int
    basis: np.ndarray
    tol: float = DEFAULT_RANK_TOL

    def __post_init__(self):
        b = np.array(self.basis, dtype=float).reshape(self.ambient_dim, -1)
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @classmethod
    def zero(cls, d: int, tol: float = DEFAULT_RANK_TOL) -> "Subspace":
        return cls(d, np.zeros((d, 0)), tol)

    @classmethod
    def full(cls, d: int, tol: float = DEFAULT_RANK_TOL) -> "Subspace":
        return cls(d, np.eye(d), tol)

    @classmethod
    def spanned_by(cls, vectors, d: int, tol: float = DEFAULT_RANK_TOL) -> "Subspace":
        return span_grow(cls.zero(d, tol), vectors)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def project(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.basis @ (self.basis.T @ v)

    def residual(self, v) -> float:
        """Euclidean distance from ``v`` to the subspace."""
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v - self.project(v)))

    def contains(self, v, atol: float = 1e-8) -> bool:
        return self.residual(v) < atol

    def contains_subspace(self, other: "Subspace", atol: float = 1e-8) -> bool:
        return all(self.residual(col) < atol for col in other.basis.T)


def span_grow(S: Subspace, vectors: Iterable, scale: float = 0.0) -> Subspace:
    """Orthonormal basis of span(S, vectors).

    Gram-Schmidt with one reorthogonalization pass. A candidate is kept when
    what survives projection exceeds ``S.tol * max(|v|, scale)``. Pass the
    norm of the operator that produced the candidates as ``scale``: a product
    that vanishes in exact arithmetic is then recognized as roundoff.
    """
    d = S.ambient_dim
    cols = [c for c in S.basis.T]
    for v in vectors:
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape[0] != d:
            raise ValueError(f"vector of length {v.shape[0]} in ambient dimension {d}")
        size = np.linalg.norm(v)
        if size == 0.0 or len(cols) == d:
            continue
        r = v
        for _ in range(2):
            for q in cols:
                r = r - (q @ r) * q
        nr = np.linalg.norm(r)
        if nr > S.tol * max(size, scale):
            cols.append(r / nr)
    basis = np.column_stack(cols) if cols else np.zeros((d, 0))
    return Subspace(d, basis, S.tol)


def orthogonal_complement(S: Subspace) -> Subspace:
    d, k = S.ambient_dim, S.dim
    if k == 0:
        return Subspace.full(d, S.tol)
    if k == d:
        return Subspace.zero(d, S.tol)
    Q, _ = np.linalg.qr(S.basis, mode="complete")
    return Subspace(d, Q[:, k:], S.tol)


def subspace_from_columns(V, tol_rel: float = DEFAULT_RANK_TOL) -> Subspace:
    """Range of the columns of ``V`` via SVD (rank cut at ``tol_rel``)."""
    V = np.asarray(V, dtype=float)
    d = V.shape[0]
    if V.size == 0:
        return Subspace.zero(d, tol_rel)
    if V.shape[1] > d:
        # range(V) == range(R^T) for V^T = QR; keeps the SVD d x d
        V = np.linalg.qr(V.T, mode="r").T
    U, s, _ = np.linalg.svd(V, full_matrices=False)
    if s[0] == 0.0:
        return Subspace.zero(d, tol_rel)
    k = int(np.count_nonzero(s > tol_rel * s[0]))
    return Subspace(d, U[:, :k], tol_rel)
