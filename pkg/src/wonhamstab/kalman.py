"""Linear-Gaussian counterpart: Riccati flow, Hautus detectability, Kalman pairs."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .numlin import (
    DEFAULT_HURWITZ_MARGIN,
    DEFAULT_RANK_TOL,
    EigenFailure,
    expm,
    numerical_rank,
)
from .wonham import BLOCK_SIZE, checkpoint_steps

PSD_FLOOR = -1e-6


class PSDLost(ArithmeticError):
    """The integrated covariance left the PSD cone (dt too large)."""


class NotDetectable(ValueError):
    def __init__(self, witness: complex):
        self.witness = witness
        super().__init__(f"(A, C) is not detectable; Hautus test fails at eigenvalue {_fmt_eig(witness)}")


class InvalidLinearModel(ValueError):
    pass


def _fmt_eig(z: complex) -> str:
    z = complex(z)
    if abs(z.imag) < 1e-12:
        return f"{z.real:g}"
    return f"{z.real:g}{z.imag:+g}j"


def _mat(a, name: str, ndim: int = 2) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != ndim:
        raise InvalidLinearModel(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidLinearModel(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LinearModel:
    """dX = AX dt + B dW, dY = CX dt + dV, with two candidate Gaussian priors."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    P0: np.ndarray
    P0_alt: np.ndarray
    x0_mean: np.ndarray
    x0_mean_alt: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "C", "P0", "P0_alt"):
            object.__setattr__(self, name, _mat(getattr(self, name), name))
        for name in ("x0_mean", "x0_mean_alt"):
            object.__setattr__(self, name, _mat(getattr(self, name), name, ndim=1))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise InvalidLinearModel(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise InvalidLinearModel(f"B must have {n} rows, got {self.B.shape}")
        if self.C.shape[1] != n:
            raise InvalidLinearModel(f"C must have {n} columns, got {self.C.shape}")
        for name in ("P0", "P0_alt"):
            P = getattr(self, name)
            if P.shape != (n, n):
                raise InvalidLinearModel(f"{name} must be {n}x{n}, got {P.shape}")
            if np.max(np.abs(P - P.T)) > 1e-12:
                raise InvalidLinearModel(f"{name} is not symmetric")
            if np.linalg.eigvalsh(P).min() <= 0:
                raise InvalidLinearModel(f"{name} is not positive definite")
        for name in ("x0_mean", "x0_mean_alt"):
            if getattr(self, name).shape != (n,):
                raise InvalidLinearModel(f"{name} must have length {n}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in _LINEAR_FIELDS}


_LINEAR_FIELDS = ("A", "B", "C", "P0", "P0_alt", "x0_mean", "x0_mean_alt")


def linear_model_from_dict(obj: dict) -> LinearModel:
    if not isinstance(obj, dict):
        raise InvalidLinearModel("linear model file must hold a JSON object")
    unknown = sorted(set(obj) - set(_LINEAR_FIELDS))
    missing = [k for k in _LINEAR_FIELDS if k not in obj]
    if unknown or missing:
        msgs = [f"unknown field {k!r}" for k in unknown] + [f"missing field {k!r}" for k in missing]
        raise InvalidLinearModel("; ".join(msgs))
    try:
        return LinearModel(**{k: obj[k] for k in _LINEAR_FIELDS})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidLinearModel):
            raise
        raise InvalidLinearModel(str(exc)) from exc


def load_linear_model(path) -> LinearModel:
    return linear_model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def linear_presets() -> dict[str, LinearModel]:
    return {
        # pure estimation of a constant: P_t = P0 / (1 + P0 t)
        "scalar": LinearModel([[0.0]], [[0.0]], [[1.0]], [[1.0]], [[4.0]], [0.0], [5.0]),
        # unstable mode invisible to C: fails the Hautus test at lambda = 1
        "nondetectable": LinearModel(
            np.diag([1.0, -1.0]), np.eye(2), [[0.0, 1.0]], np.eye(2), 4 * np.eye(2), [0.0, 0.0], [1.0, 1.0]
        ),
        "stiff": LinearModel(
            [[-50.0, 1.0], [0.0, -20.0]], np.eye(2), np.eye(2), np.eye(2), 3 * np.eye(2), [0.0, 0.0], [2.0, -2.0]
        ),
    }


class HautusResult(NamedTuple):
    detectable: bool
    witness: Optional[complex]


def hautus_detectable(
    A, C, margin: float = DEFAULT_HURWITZ_MARGIN, tol_rel: float = DEFAULT_RANK_TOL
) -> HautusResult:
    """Every eigenvalue with Re >= -margin must give rank [A - lam I; C] == n."""
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or C.shape[1] != n:
        raise ValueError(f"inconsistent shapes A {A.shape}, C {C.shape}")
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    for lam in sorted(eig, key=lambda z: (-z.real, z.imag)):
        if lam.real < -margin:
            continue
        stack = np.vstack([A - lam * np.eye(n), C.astype(complex)])
        if numerical_rank(stack, tol_rel) < n:
            return HautusResult(False, complex(lam))
    return HautusResult(True, None)


@dataclass
class RiccatiTrace:
    times: np.ndarray
    P_path: np.ndarray  # (steps+1, n, n)
    P_alt_path: np.ndarray
    gap: np.ndarray  # Frobenius norm of P - P_alt


def _riccati_rhs(P, A, Ct, BBt):
    # P is symmetric: A P + P A^T = M + M^T and P C^T C P = K K^T
    M = A @ P
    K = P @ Ct
    return M + np.swapaxes(M, -1, -2) + BBt - K @ np.swapaxes(K, -1, -2)


def _rk4(P, dt, A, Ct, BBt):
    k1 = _riccati_rhs(P, A, Ct, BBt)
    k2 = _riccati_rhs(P + 0.5 * dt * k1, A, Ct, BBt)
    k3 = _riccati_rhs(P + 0.5 * dt * k2, A, Ct, BBt)
    k4 = _riccati_rhs(P + dt * k3, A, Ct, BBt)
    P = P + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def riccati_flow(lm: LinearModel, t_max: float, dt: float) -> RiccatiTrace:
    """RK4 integration of dP/dt = AP + PA^T + BB^T - P C^T C P from both priors.

    The two flows are stepped together as a stack of two matrices.
    """
    if not (t_max > 0 and dt > 0):
        raise ValueError("t_max and dt must be positive")
    n_steps = max(1, int(round(t_max / dt)))
    A, BBt, Ct = lm.A, lm.B @ lm.B.T, lm.C.T.copy()
    out = np.empty((n_steps + 1, 2, lm.n, lm.n))
    P = np.stack([lm.P0, lm.P0_alt])
    out[0] = P
    scalar = lm.n == 1
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_steps + 1):
            P = _rk4(P, dt, A, Ct, BBt)
            if not np.isfinite(P).all():
                raise PSDLost(f"Riccati flow diverged at t={k * dt:g}; reduce dt")
            low = P.min() if scalar else np.linalg.eigvalsh(P).min()
            if low < PSD_FLOOR:
                raise PSDLost(f"min eigenvalue {low:.3g} at t={k * dt:g}; reduce dt")
            out[k] = P
    P_path, P_alt = out[:, 0], out[:, 1]
    gap = np.linalg.norm(P_path - P_alt, axis=(1, 2))
    return RiccatiTrace(np.arange(n_steps + 1) * dt, P_path, P_alt, gap)


def _discretize(A, B, dt):
    """Exact one-step transition exp(A dt) and a square root of its noise covariance."""
    n = A.shape[0]
    # Van Loan block exponential
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = B @ B.T
    M[n:, n:] = A.T
    F = expm(M, dt)
    Phi = F[n:, n:].T
    Q = Phi @ F[:n, n:]
    Q = 0.5 * (Q + Q.T)
    w, V = np.linalg.eigh(Q)
    L = V * np.sqrt(np.maximum(w, 0.0))
    return Phi, L


def _rowwise(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Rows of X mapped by M (out[p] = M @ X[p]) in a fixed summation order."""
    out = X[:, 0:1] * M[:, 0]
    for j in range(1, M.shape[1]):
        out = out + X[:, j : j + 1] * M[:, j]
    return out


@dataclass
class KalmanPairSummary:
    times: np.ndarray  # full grid
    mean_xdiff: np.ndarray  # Monte-Carlo mean of |Xhat - Xhat'| on the grid
    gap: np.ndarray  # |P - P'|_F on the grid
    checkpoints: list[float]
    checkpoint_mean_xdiff: list[float]
    checkpoint_gap: list[float]
    decreasing_tail: bool  # mean_xdiff(t_max) <= mean_xdiff(t_max / 2)

    def to_dict(self) -> dict:
        return {
            "checkpoints": self.checkpoints,
            "mean_xdiff": self.checkpoint_mean_xdiff,
            "gap": self.checkpoint_gap,
            "decreasing_tail": self.decreasing_tail,
        }


def _kalman_block(lm, trace, Phi, L, dt, seed, paths):
    n_steps = len(trace.times) - 1
    P = len(paths)
    n, p = lm.n, lm.C.shape[0]
    X = np.empty((P, n))
    noise = np.empty((P, n_steps, L.shape[1]))
    obs = np.empty((P, n_steps, p))
    chol0 = np.linalg.cholesky(lm.P0)
    for row, i in enumerate(paths):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(i)]))
        X[row] = lm.x0_mean + chol0 @ rng.standard_normal(n)
        noise[row] = rng.standard_normal((n_steps, L.shape[1]))
        obs[row] = rng.standard_normal((n_steps, p))
    xh = np.tile(lm.x0_mean, (P, 1))
    xh_alt = np.tile(lm.x0_mean_alt, (P, 1))
    sums = np.empty(n_steps + 1)
    sqdt = math.sqrt(dt)
    Ct = lm.C

    def diff_norm():
        dlt = xh - xh_alt
        return np.sqrt(np.sum(dlt * dlt, axis=1)).sum()

    sums[0] = diff_norm()
    for k in range(n_steps):
        dY = _rowwise(X, Ct) * dt + sqdt * obs[:, k]
        for est, Pk in ((xh, trace.P_path[k]), (xh_alt, trace.P_alt_path[k])):
            K = Pk @ Ct.T
            innov = dY - _rowwise(est, Ct) * dt
            est += _rowwise(est, lm.A) * dt + _rowwise(innov, K)
        X = _rowwise(X, Phi) + _rowwise(noise[:, k], L)
        sums[k + 1] = diff_norm()
    return sums


def kalman_pair_experiment(
    lm: LinearModel, t_max: float, dt: float, n_paths: int, seed: int, workers: int = 1,
    trace: Optional[RiccatiTrace] = None,
) -> KalmanPairSummary:
    """Two Kalman filters from (x0_mean, P0) and (x0_mean_alt, P0_alt) on shared data.

    The signal starts from N(x0_mean, P0) and moves by its exact Gaussian
    transition; filters take Euler steps with gains from the RK4 Riccati flow.
    """
    hw = hautus_detectable(lm.A, lm.C)
    if not hw.detectable:
        raise NotDetectable(hw.witness)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if trace is None:
        trace = riccati_flow(lm, t_max, dt)
    Phi, L = _discretize(lm.A, lm.B, dt)
    blocks = [list(range(s, min(s + BLOCK_SIZE, n_paths))) for s in range(0, n_paths, BLOCK_SIZE)]

    def job(paths):
        return _kalman_block(lm, trace, Phi, L, dt, seed, paths)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            sums = list(ex.map(job, blocks))
    else:
        sums = [job(b) for b in blocks]
    total = sums[0].copy()
    for s in sums[1:]:
        total += s
    mean = total / n_paths

    n_steps = len(trace.times) - 1
    ck = checkpoint_steps(n_steps, dt)
    half = n_steps // 2
    return KalmanPairSummary(
        times=trace.times,
        mean_xdiff=mean,
        gap=trace.gap,
        checkpoints=[float(k * dt) for k in ck],
        checkpoint_mean_xdiff=[float(mean[k]) for k in ck],
        checkpoint_gap=[float(trace.gap[k]) for k in ck],
        decreasing_tail=bool(mean[-1] <= mean[half]),
    )


def exp_decay_convolution(f_samples, lam: float, dt: float = 1.0) -> np.ndarray:
    """Samples of T -> int_0^T exp(-lam (T - t)) f(t) dt on the grid of ``f_samples``.

    Propagated exactly between grid points with f linear on each cell.
    """
    if not lam > 0:
        raise ValueError("lam must be > 0")
    f = np.asarray(f_samples, dtype=float)
    if f.size < 2:
        raise ValueError("need at least two samples")
    a = math.exp(-lam * dt)
    x = lam * dt
    # weights of f_k and f_{k+1} for a linear f on one cell
    w0 = (1 - (1 + x) * a) / (lam * x)
    w1 = (1 - a) / lam - w0
    g = np.empty_like(f)
    g[0] = 0.0
    for k in range(f.size - 1):
        g[k + 1] = a * g[k] + w0 * f[k] + w1 * f[k + 1]
    return g


def exp_decay_convolution_check(f_samples, lam: float, dt: float = 1.0) -> bool:
    """Does the exponentially weighted convolution of f die out on the given grid?

    True when its size over the last tenth of the grid drops below 1e-3 of
    its peak (plus 1e-12).
    """
    g = exp_decay_convolution(f_samples, lam, dt)
    tail = np.max(np.abs(g[-max(1, g.size // 10):]))
    return bool(tail < 1e-3 * (np.max(np.abs(g)) + 1e-12))


def write_gap_csv(summary: KalmanPairSummary, path, stride: int = 1) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["t", "gap", "mean_xdiff"])
        idx = list(range(0, len(summary.times), stride))
        if idx[-1] != len(summary.times) - 1:
            idx.append(len(summary.times) - 1)
        for k in idx:
            w.writerow([repr(float(summary.times[k])), repr(float(summary.gap[k])), repr(float(summary.mean_xdiff[k]))])
