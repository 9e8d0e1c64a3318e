"""Finite-state signal/observation models, initial pairs and level sets."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

ROW_SUM_TOL = 1e-12
PROB_SUM_TOL = 1e-12
LEVEL_TOL_REL = 1e-9


class ObsKind(str, enum.Enum):
    WHITE_NOISE = "white_noise"
    COUNTING = "counting"


@dataclass(frozen=True)
class ModelIssue:
    kind: str  # NegativeRate | RowSumNonzero | DimensionMismatch | NegativeIntensity | ...
    where: str
    message: str

    def __str__(self):
        return f"{self.kind} at {self.where}: {self.message}"


class InvalidModel(ValueError):
    """Raised by :func:`validate_model`; ``issues`` lists every violation."""

    def __init__(self, issues: Sequence[ModelIssue]):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))

    @property
    def kinds(self) -> list[str]:
        return [i.kind for i in self.issues]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FiniteHmm:
    """Signal chain on states a_1..a_d observed through h(X_t).

    ``generator`` is the intensity matrix with rows summing to zero; ``h``
    holds the observation function (intensities for counting models).
    Construction does not validate; call :func:`validate_model`.
    """

    generator: np.ndarray
    h: np.ndarray
    kappa: float = 1.0
    obs_kind: ObsKind = ObsKind.WHITE_NOISE
    labels: Optional[tuple[str, ...]] = None
    d: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "generator", _frozen(self.generator))
        object.__setattr__(self, "h", _frozen(self.h))
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "obs_kind", ObsKind(self.obs_kind))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))
        if self.d is None:
            object.__setattr__(self, "d", int(self.generator.shape[0]) if self.generator.ndim else 0)

    def with_kappa(self, kappa: float) -> "FiniteHmm":
        return replace(self, kappa=kappa)

    def state_name(self, i: int) -> str:
        return self.labels[i] if self.labels else f"a{i + 1}"

    def to_dict(self) -> dict:
        out = {
            "d": self.d,
            "generator": self.generator.tolist(),
            "h": self.h.tolist(),
            "kappa": self.kappa,
            "obs_kind": self.obs_kind.value,
        }
        if self.labels is not None:
            out["labels"] = list(self.labels)
        return out


def model_issues(m: FiniteHmm) -> list[ModelIssue]:
    issues = []
    G, h = m.generator, m.h
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        issues.append(ModelIssue("DimensionMismatch", "generator", f"not square: shape {G.shape}"))
        return issues
    n = G.shape[0]
    if m.d is None or m.d < 1 or m.d != n:
        issues.append(ModelIssue("DimensionMismatch", "d", f"d={m.d} but generator is {n}x{n}"))
    if h.ndim != 1 or h.shape[0] != n:
        issues.append(ModelIssue("DimensionMismatch", "h", f"length {h.size} but generator is {n}x{n}"))
    if m.labels is not None and len(m.labels) != n:
        issues.append(ModelIssue("DimensionMismatch", "labels", f"{len(m.labels)} labels for {n} states"))
    if not np.all(np.isfinite(G)) or not np.all(np.isfinite(h)) or not np.isfinite(m.kappa):
        issues.append(ModelIssue("NonFinite", "model", "generator, h and kappa must be finite"))
        return issues
    for i in range(n):
        for j in range(n):
            if i != j and G[i, j] < 0:
                issues.append(ModelIssue("NegativeRate", f"({i},{j})", f"off-diagonal rate {float(G[i, j])!r} < 0"))
    for i, s in enumerate(G.sum(axis=1)):
        if abs(s) > ROW_SUM_TOL:
            issues.append(ModelIssue("RowSumNonzero", f"row {i}", f"sums to {float(s)!r}"))
    if m.kappa < 0:
        issues.append(ModelIssue("NegativeKappa", "kappa", f"kappa={m.kappa!r} < 0"))
    if m.obs_kind is ObsKind.COUNTING and h.ndim == 1:
        for i in np.flatnonzero(h < 0):
            issues.append(ModelIssue("NegativeIntensity", f"h[{i}]", f"counting intensity {float(h[i])!r} < 0"))
    return issues


def validate_model(m: FiniteHmm) -> FiniteHmm:
    """Return ``m`` unchanged if every invariant holds, else raise :class:`InvalidModel`."""
    issues = model_issues(m)
    if issues:
        raise InvalidModel(issues)
    return m


@dataclass(frozen=True)
class InitialPair:
    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        for name in ("mu", "nu"):
            v = np.array(getattr(self, name), dtype=float)
            if v.ndim != 1:
                raise ValueError(f"{name} must be a vector")
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has negative or non-finite entries: {v.tolist()}")
            if abs(v.sum() - 1.0) > PROB_SUM_TOL:
                raise ValueError(f"{name} sums to {float(v.sum())!r}, not 1")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if self.mu.shape != self.nu.shape:
            raise ValueError("mu and nu have different lengths")

    @property
    def mu_abs_cont_nu(self) -> bool:
        """True iff mu << nu (nu_i == 0 forces mu_i == 0)."""
        return bool(np.all(self.mu[self.nu == 0] == 0))


@dataclass(frozen=True)
class LevelSetStructure:
    values: tuple[float, ...]
    projections: tuple[np.ndarray, ...]
    group_of: np.ndarray = field(repr=False)  # level-set index of each state

    @property
    def indicators(self) -> np.ndarray:
        """d x r matrix whose columns are H_{b_k} 1."""
        return np.column_stack([np.diag(H) for H in self.projections])


def level_sets(m: FiniteHmm) -> LevelSetStructure:
    """Group the states by observation value.

    Sorted values closer than ``1e-9 * max(1, max|h|)`` to their neighbour
    are chained into one level set. Sets are numbered by their lowest state
    index and labelled by that state's h value, so relabeling h injectively
    changes nothing downstream.
    """
    h = m.h
    d = h.shape[0]
    tol = LEVEL_TOL_REL * max(1.0, float(np.max(np.abs(h))) if d else 1.0)
    order = np.argsort(h, kind="stable")
    raw = np.empty(d, dtype=int)
    g = -1
    prev = None
    for i in order:
        if prev is None or h[i] - prev > tol:
            g += 1
        raw[i] = g
        prev = h[i]
    renumber = {}
    for i in range(d):
        renumber.setdefault(raw[i], len(renumber))
    group_of = np.array([renumber[raw[i]] for i in range(d)], dtype=int)
    values, projections = [], []
    for k in range(len(renumber)):
        first = int(np.flatnonzero(group_of == k)[0])
        values.append(float(h[first]))
        P = np.diag((group_of == k).astype(float))
        P.setflags(write=False)
        projections.append(P)
    group_of.setflags(write=False)
    return LevelSetStructure(tuple(values), tuple(projections), group_of)


def _cyclic_generator(d: int, rate: float = 1.0) -> np.ndarray:
    G = -rate * np.eye(d)
    for i in range(d):
        G[i, (i + 1) % d] = rate
    return G


def builtin_presets(kappa_e6: float = 1.0) -> dict[str, tuple[FiniteHmm, InitialPair]]:
    """Named models used by the CLI (``presets:<name>``) and the test suite.

    E1 observable ergodic; E2 ergodic with h = 0 (detectable, not observable);
    E3 two absorbing states told apart by h; E4 two absorbing states with
    h = 0 (not detectable); E5 one transient state leaking into two absorbing
    ones; E6 a 4-cycle with parity observations, for kappa sweeps.
    """
    flip = [[-1.0, 1.0], [1.0, -1.0]]
    still = [[0.0, 0.0], [0.0, 0.0]]
    pair2 = InitialPair([0.9, 0.1], [0.5, 0.5])
    return {
        "E1": (FiniteHmm(flip, [0.0, 1.0], 1.0), pair2),
        "E2": (FiniteHmm(flip, [0.0, 0.0], 1.0), pair2),
        "E3": (FiniteHmm(still, [0.0, 1.0], 1.0), pair2),
        "E4": (FiniteHmm(still, [0.0, 0.0], 1.0), pair2),
        "E5": (
            FiniteHmm([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, -2.0]], [0.0, 1.0, 0.0], 1.0),
            InitialPair([0.1, 0.1, 0.8], [1 / 3, 1 / 3, 1 / 3]),
        ),
        "E6": (
            FiniteHmm(_cyclic_generator(4), [1.0, 0.0, 1.0, 0.0], kappa_e6),
            InitialPair([0.85, 0.05, 0.05, 0.05], [0.25, 0.25, 0.25, 0.25]),
        ),
    }


_MODEL_FIELDS = {"d", "generator", "h", "kappa", "obs_kind", "labels"}


def model_from_dict(obj: dict) -> FiniteHmm:
    """Build and validate a model from its JSON object form."""
    if not isinstance(obj, dict):
        raise InvalidModel([ModelIssue("Schema", "<root>", "model file must hold a JSON object")])
    problems = []
    unknown = set(obj) - _MODEL_FIELDS
    for k in sorted(unknown):
        problems.append(ModelIssue("Schema", k, "unknown field"))
    for k in ("generator", "h"):
        if k not in obj:
            problems.append(ModelIssue("Schema", k, "missing required field"))
    kind = obj.get("obs_kind", ObsKind.WHITE_NOISE.value)
    if kind not in {k.value for k in ObsKind}:
        problems.append(ModelIssue("Schema", "obs_kind", f"expected white_noise or counting, got {kind!r}"))
    if problems:
        raise InvalidModel(problems)
    try:
        G = np.array(obj["generator"], dtype=float)
        h = np.array(obj["h"], dtype=float)
        kappa = float(obj.get("kappa", 1.0))
    except (TypeError, ValueError) as exc:
        raise InvalidModel([ModelIssue("Schema", "numbers", str(exc))]) from exc
    d = obj.get("d")
    m = FiniteHmm(G, h, kappa, ObsKind(kind), obj.get("labels"), int(d) if d is not None else None)
    return validate_model(m)


def load_model(path) -> FiniteHmm:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
