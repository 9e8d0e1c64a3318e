"""Observable and nonobservable spaces of a finite-state model.

The observable space is the smallest subspace of R^d that contains the
level-set indicators H_b 1 and is invariant under the generator and every
H_b. Only the level sets of h enter, so the same criterion serves white-noise
and counting observations and kappa plays no part.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import FiniteHmm, level_sets
from .numlin import (
    DEFAULT_RANK_TOL,
    Subspace,
    expm,
    numerical_rank,
    orthogonal_complement,
    span_grow,
    subspace_from_columns,
)

MAX_WORDS = 10**6


class Shortcut(str, enum.Enum):
    NONE = "none"
    ONE_TO_ONE_H = "one_to_one_h"
    RANK_TEST = "rank_test"


class ExplosionGuard(RuntimeError):
    """brute_force_O would enumerate more than MAX_WORDS words."""


@dataclass(frozen=True)
class ObservabilityResult:
    O: Subspace
    N: Subspace
    iterations_used: int
    is_observable: bool
    shortcut_used: Shortcut = Shortcut.NONE
    # dim Z_1, dim Z_2, ... up to and including the first repeat (empty for shortcuts)
    z_dims: tuple[int, ...] = field(default=())


def one_to_one_shortcut(m: FiniteHmm) -> bool:
    """True when h separates all states, which makes the model observable outright."""
    return len(level_sets(m).values) == m.d


def linear_rank_test(m: FiniteHmm, tol_rel: float = DEFAULT_RANK_TOL) -> bool:
    """Krylov rank test rank[C, LC, ..., L^{d-1}C] == d on the level-set indicators.

    Sufficient for observability but not necessary: it only looks at the
    one-dimensional laws of h(X_t).
    """
    C = level_sets(m).indicators
    blocks = [C]
    for _ in range(m.d - 1):
        blocks.append(m.generator @ blocks[-1])
    return numerical_rank(np.hstack(blocks), tol_rel) == m.d


def observable_space(
    m: FiniteHmm, *, use_shortcuts: bool = True, tol: float = DEFAULT_RANK_TOL
) -> ObservabilityResult:
    d = m.d
    if use_shortcuts and one_to_one_shortcut(m):
        full = Subspace.full(d, tol)
        return ObservabilityResult(full, orthogonal_complement(full), 0, True, Shortcut.ONE_TO_ONE_H)

    ls = level_sets(m)
    L = m.generator
    Z = span_grow(Subspace.zero(d, tol), ls.indicators.T)
    L_norm = float(np.linalg.norm(L, 2)) if d else 0.0
    dims = [Z.dim]
    iterations = 0
    while Z.dim < d:
        B = Z.basis
        Z_next = span_grow(Z, (L @ B).T, scale=L_norm)
        for H in ls.projections:
            Z_next = span_grow(Z_next, (H @ B).T, scale=1.0)
        dims.append(Z_next.dim)
        if Z_next.dim == Z.dim:
            break
        Z = Z_next
        iterations += 1

    shortcut = Shortcut.NONE
    if use_shortcuts and Z.dim == d and linear_rank_test(m, tol):
        shortcut = Shortcut.RANK_TEST
    return ObservabilityResult(Z, orthogonal_complement(Z), iterations, Z.dim == d, shortcut, tuple(dims))


def count_words(r: int, depth: int, n_deltas: int) -> int:
    return sum(r ** (k + 1) * n_deltas**k for k in range(depth + 1))


def brute_force_O(
    m: FiniteHmm, depth: int, deltas: Sequence[float], tol: float = DEFAULT_RANK_TOL
) -> Subspace:
    """Span of every word H_{n0} e^{L d1} H_{n1} ... e^{L dk} H_{nk} 1 with k <= depth.

    Plain enumeration over level sets and the given time grid; meant as an
    independent check on :func:`observable_space`, not as a solver.
    """
    ls = level_sets(m)
    r = len(ls.values)
    deltas = [float(x) for x in deltas]
    if depth < 0:
        raise ValueError("depth must be >= 0")
    total = count_words(r, depth, len(deltas))
    if total > MAX_WORDS:
        raise ExplosionGuard(f"{total} words at depth {depth} (limit {MAX_WORDS})")

    masks = [np.diag(H) for H in ls.projections]
    props = [expm(m.generator, s) for s in deltas]
    # words are built right to left: level k holds every word with k exponentials
    level = np.stack(masks)  # (r, d): H_n 1
    collected = [level]
    for _ in range(depth):
        moved = np.concatenate([level @ E.T for E in props])  # e^{L s} w, as rows
        level = np.concatenate([moved * mk for mk in masks])
        collected.append(level)
    return subspace_from_columns(np.concatenate(collected).T, tol)
