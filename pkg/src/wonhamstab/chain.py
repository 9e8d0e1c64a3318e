"""Class structure of the signal chain and its forward (Kolmogorov) flow."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .model import FiniteHmm
from .numlin import expm
from .observability import ObservabilityResult

EDGE_TOL = 1e-12


@dataclass(frozen=True)
class ChainDecomposition:
    ergodic_classes: tuple[tuple[int, ...], ...]
    transient: tuple[int, ...]
    stationary: tuple[np.ndarray, ...]  # one length-d law per class, zero off the class

    @property
    def num_classes(self) -> int:
        return len(self.ergodic_classes)

    def indicator(self, k: int, d: int) -> np.ndarray:
        v = np.zeros(d)
        v[list(self.ergodic_classes[k])] = 1.0
        return v


def transition_graph(m: FiniteHmm) -> np.ndarray:
    A = m.generator > EDGE_TOL
    np.fill_diagonal(A, False)
    return A


def reachability(m: FiniteHmm) -> np.ndarray:
    """Boolean matrix R with R[i, j] iff j can be reached from i (R[i, i] always)."""
    R = transition_graph(m) | np.eye(m.d, dtype=bool)
    # transitive closure by repeated squaring; d is small
    while True:
        R2 = (R.astype(np.int64) @ R.astype(np.int64)) > 0
        if np.array_equal(R2, R):
            return R
        R = R2


def _stationary_law(G: np.ndarray, members: list[int], d: int) -> np.ndarray:
    sub = G[np.ix_(members, members)]
    k = len(members)
    # bordered system [sub^T; 1^T] pi = [0; 1]
    A = np.vstack([sub.T, np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi_c, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.zeros(d)
    pi[members] = pi_c
    return pi


def decompose(m: FiniteHmm) -> ChainDecomposition:
    """Split the states into closed communicating classes and transient states."""
    A = transition_graph(m)
    n_comp, comp = connected_components(A, directed=True, connection="strong")
    closed = []
    transient = []
    for c in range(n_comp):
        members = np.flatnonzero(comp == c)
        outside = np.flatnonzero(comp != c)
        if A[np.ix_(members, outside)].any():
            transient.extend(members.tolist())
        else:
            closed.append(members.tolist())
    closed.sort(key=min)
    stationary = tuple(_stationary_law(m.generator, cls, m.d) for cls in closed)
    return ChainDecomposition(
        tuple(tuple(c) for c in closed), tuple(sorted(transient)), stationary
    )


def forward_flow(m: FiniteHmm, p0, t: float) -> np.ndarray:
    """Law of X_t started from ``p0``: exp(L^T t) p0."""
    p0 = np.asarray(p0, dtype=float)
    return expm(m.generator.T, t) @ p0


def indicator_in_O_check(
    m: FiniteHmm, dec: ChainDecomposition, obs: ObservabilityResult, atol: float = 1e-8
) -> list[bool]:
    """For each ergodic class, whether its indicator function lies in O."""
    return [obs.O.residual(dec.indicator(k, m.d)) < atol for k in range(dec.num_classes)]
