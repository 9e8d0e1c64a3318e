"""Observability, detectability and stability verdicts for a finite model."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from .chain import ChainDecomposition, decompose
from .model import FiniteHmm, ObsKind
from .numlin import (
    DEFAULT_HURWITZ_MARGIN,
    DEFAULT_RANK_TOL,
    Subspace,
    is_hurwitz,
    numerical_rank,
)
from .observability import ObservabilityResult, observable_space

INVARIANCE_TOL = 1e-8

STABLE_NOTE = "requires kappa>0, white-noise observations, mu<<nu"
STRONG_NOTE = "requires kappa>0"
NOT_APPLICABLE = "theorem not applicable - use simulation"


class InvarianceViolation(ArithmeticError):
    """The supplied N is not invariant under the adjoint generator."""


class VerdictInconsistency(ArithmeticError):
    """Hurwitz test and rank test disagree on L^T restricted to N."""


@dataclass(frozen=True)
class DetectEvidence:
    dim_N: int
    max_real_part: Union[float, str]  # "N trivial" when dim_N == 0
    rank: Optional[int] = None


@dataclass(frozen=True)
class StabilityReport:
    observable: bool
    detectable: bool
    detect_evidence: DetectEvidence
    stable: Optional[bool]  # None: theorem does not apply (kappa == 0 or counting)
    stable_note: str
    strong_stable: Optional[bool]
    strong_stable_note: str
    num_ergodic_classes: int
    has_transient: bool
    kappa_positive: bool

    def to_dict(self) -> dict:
        return asdict(self)


def restrict_generator_to_N(m: FiniteHmm, N: Subspace, atol: float = INVARIANCE_TOL) -> np.ndarray:
    """Matrix of L^T on N in the orthonormal basis B of N, i.e. B^T L^T B."""
    if N.dim == 0:
        raise ValueError("N is trivial; there is nothing to restrict to")
    B = N.basis
    LtB = m.generator.T @ B
    R = B.T @ LtB
    resid = float(np.linalg.norm(LtB - B @ R))
    if resid >= atol:
        raise InvarianceViolation(f"|L^T B - B R| = {resid:.3g}; N is not L^T-invariant")
    return R


def assess(
    m: FiniteHmm,
    obs: Optional[ObservabilityResult] = None,
    dec: Optional[ChainDecomposition] = None,
    *,
    margin: float = DEFAULT_HURWITZ_MARGIN,
    tol_rel: float = DEFAULT_RANK_TOL,
) -> StabilityReport:
    obs = obs if obs is not None else observable_space(m)
    dec = dec if dec is not None else decompose(m)

    if obs.N.dim == 0:
        evidence = DetectEvidence(0, "N trivial")
        detectable = True
    else:
        R = restrict_generator_to_N(m, obs.N)
        hw = is_hurwitz(R, margin)
        rank = numerical_rank(R, tol_rel, scale=float(np.linalg.norm(m.generator, 2)))
        # nonzero eigenvalues of a generator have negative real part,
        # so full rank and Hurwitz must coincide
        if hw.is_hurwitz != (rank == obs.N.dim):
            raise VerdictInconsistency(
                f"Hurwitz={hw.is_hurwitz} (max Re {hw.max_real_part:.3g}) but rank {rank}/{obs.N.dim}"
            )
        evidence = DetectEvidence(obs.N.dim, hw.max_real_part, rank)
        detectable = obs.is_observable or hw.is_hurwitz

    kappa_positive = m.kappa > 0
    theorem_applies = kappa_positive and m.obs_kind is ObsKind.WHITE_NOISE
    single_class = dec.num_classes == 1
    if theorem_applies:
        stable, stable_note = detectable, STABLE_NOTE
        strong, strong_note = single_class, STRONG_NOTE
    else:
        stable, stable_note = None, NOT_APPLICABLE
        strong, strong_note = None, NOT_APPLICABLE

    return StabilityReport(
        observable=obs.is_observable,
        detectable=detectable,
        detect_evidence=evidence,
        stable=stable,
        stable_note=stable_note,
        strong_stable=strong,
        strong_stable_note=strong_note,
        num_ergodic_classes=dec.num_classes,
        has_transient=bool(dec.transient),
        kappa_positive=kappa_positive,
    )
