"""Monte-Carlo simulation of signal paths, observations and Wonham filter pairs.

The filter is discretized by splitting: an exact prediction with
exp(L dt) followed by a pointwise Bayes correction using the likelihood of
the observed increment. Both halves map the simplex into itself, and a
state that has zero mass and cannot be reached stays at exactly zero.

Reproducibility: every path draws from its own RNG streams, a pure
function of (seed, path index). Paths are processed in fixed blocks of
BLOCK_SIZE and all per-step arithmetic is row-local, so the worker count
never changes a single bit of the output.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .chain import reachability
from .model import FiniteHmm, InitialPair, ObsKind
from .numlin import expm

log = logging.getLogger(__name__)

BLOCK_SIZE = 64
MAX_STEPS = 10**8
N_CHECKPOINTS = 16


class DegenerateWeight(ArithmeticError):
    """Every correction weight on the filter's support vanished."""


@dataclass(frozen=True)
class SimConfig:
    t_max: float
    dt: float
    n_paths: int = 1
    seed: int = 0
    record_stride: int = 1
    record_paths: int = 5  # full trajectories are kept for paths 0..record_paths-1

    def __post_init__(self):
        if not (self.t_max > 0 and self.dt > 0):
            raise ValueError("t_max and dt must be positive")
        if self.dt > self.t_max:
            raise ValueError(f"dt={self.dt} exceeds t_max={self.t_max}")
        if self.t_max / self.dt > MAX_STEPS:
            raise ValueError(f"t_max/dt = {self.t_max / self.dt:.3g} exceeds {MAX_STEPS:g} steps")
        if self.n_paths < 1 or self.record_stride < 1 or self.record_paths < 0:
            raise ValueError("n_paths and record_stride must be >= 1, record_paths >= 0")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_max / self.dt)))


def default_dt(m: FiniteHmm) -> float:
    rate = float(np.max(np.abs(np.diag(m.generator)))) if m.d else 0.0
    hmax2 = float(np.max(m.h**2)) if m.d else 0.0
    scale = 1.0
    if rate > 0:
        scale = min(scale, 1.0 / rate)
    if m.obs_kind is ObsKind.WHITE_NOISE and hmax2 > 0 and m.kappa > 0:
        scale = min(scale, m.kappa**2 / hmax2)
    return max(1e-3 * scale, 1e-6)


def checkpoint_steps(n_steps: int, dt: float, count: int = N_CHECKPOINTS) -> np.ndarray:
    """Grid indices of ``count`` log-spaced times in [t_max/100, t_max]."""
    t_max = n_steps * dt
    times = np.geomspace(t_max / 100, t_max, count)
    steps = np.unique(np.clip(np.rint(times / dt).astype(np.int64), 1, n_steps))
    if steps[-1] != n_steps:
        steps = np.append(steps, n_steps)
    return steps


def path_streams(seed: int, path_index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (signal, observation) generators for one path."""
    root = np.random.SeedSequence([int(seed) & (2**64 - 1), int(path_index)])
    sig, obs = root.spawn(2)
    return np.random.default_rng(sig), np.random.default_rng(obs)


class JumpPath(NamedTuple):
    times: np.ndarray  # jump epochs, times[0] == 0
    states: np.ndarray  # state held from times[k] until times[k+1]


def simulate_signal(m: FiniteHmm, x0: int, horizon: float, rng: np.random.Generator) -> JumpPath:
    G = m.generator
    times, states = [0.0], [int(x0)]
    t, x = 0.0, int(x0)
    while True:
        out = np.where(np.arange(m.d) == x, 0.0, np.maximum(G[x], 0.0))
        rate = out.sum()
        if rate <= 0.0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= horizon:
            break
        cum = np.cumsum(out)
        x = int(min(np.searchsorted(cum, rng.random() * cum[-1], side="right"), m.d - 1))
        times.append(t)
        states.append(x)
    return JumpPath(np.array(times), np.array(states, dtype=np.int64))


def states_on_grid(path: JumpPath, n_steps: int, dt: float) -> np.ndarray:
    grid = np.arange(n_steps + 1) * dt
    return path.states[np.searchsorted(path.times, grid, side="right") - 1]


def integrated_h(m: FiniteHmm, path: JumpPath, n_steps: int, dt: float) -> np.ndarray:
    """Exact integral of h(X_s) over each grid step (t_k, t_k + dt]."""
    left = states_on_grid(path, n_steps, dt)[:-1]
    integ = m.h[left] * dt
    for j in range(1, len(path.times)):
        tau = path.times[j]
        k = int(tau // dt)
        # align with the grid values k * dt used by states_on_grid
        while k > 0 and k * dt > tau:
            k -= 1
        while (k + 1) * dt <= tau:
            k += 1
        if k >= n_steps:
            continue
        if tau > k * dt:
            a, b = path.states[j - 1], path.states[j]
            integ[k] += (m.h[b] - m.h[a]) * ((k + 1) * dt - tau)
    return integ


def simulate_observations(
    m: FiniteHmm, path: JumpPath, n_steps: int, dt: float, rng: np.random.Generator
) -> np.ndarray:
    """Observation increments over a grid of ``n_steps`` steps of length ``dt``.

    White noise: int h(X_s) ds + kappa sqrt(dt) xi. Counting: Poisson counts
    with mean int h(X_s) ds.
    """
    integ = integrated_h(m, path, n_steps, dt)
    if m.obs_kind is ObsKind.COUNTING:
        return rng.poisson(np.maximum(integ, 0.0)).astype(float)
    return integ + m.kappa * math.sqrt(dt) * rng.standard_normal(n_steps)


def prediction_matrix(m: FiniteHmm, dt: float) -> np.ndarray:
    """exp(L dt) with structural zeros restored and roundoff negatives removed."""
    E = expm(m.generator, dt)
    E[~reachability(m)] = 0.0
    return np.maximum(E, 0.0)


# Row-local helpers. Column loops keep each path's arithmetic identical no
# matter how many paths share the array.

def _row_sum(A: np.ndarray) -> np.ndarray:
    s = A[:, 0].copy()
    for j in range(1, A.shape[1]):
        s += A[:, j]
    return s


def _row_max(A: np.ndarray) -> np.ndarray:
    s = A[:, 0].copy()
    for j in range(1, A.shape[1]):
        s = np.maximum(s, A[:, j])
    return s


def _predict(pi: np.ndarray, E: np.ndarray) -> np.ndarray:
    out = pi[:, 0:1] * E[0]
    for i in range(1, E.shape[0]):
        out = out + pi[:, i : i + 1] * E[i]
    return np.maximum(out, 0.0)


class _Likelihood:
    def __init__(self, m: FiniteHmm, dt: float):
        self.kind = m.obs_kind
        self.dt = dt
        self.h = m.h.copy()
        if self.kind is ObsKind.WHITE_NOISE:
            if not m.kappa > 0:
                raise ValueError("white-noise filtering needs kappa > 0")
            self.inv_k2 = 1.0 / m.kappa**2
            self.drift = 0.5 * self.h**2 * dt
        else:
            with np.errstate(divide="ignore"):
                self.log_h = np.log(self.h)

    def log_weights(self, dY: np.ndarray) -> np.ndarray:
        if self.kind is ObsKind.WHITE_NOISE:
            return (dY[:, None] * self.h - self.drift) * self.inv_k2
        # h_i^n e^{-h_i dt}, with 0^0 = 1
        with np.errstate(invalid="ignore"):
            counts = np.where(dY[:, None] > 0, dY[:, None] * self.log_h, 0.0)
        return counts - self.h * self.dt


def _correct(pred: np.ndarray, lw: np.ndarray) -> np.ndarray:
    support = pred > 0
    mx = _row_max(np.where(support, lw, -np.inf))
    with np.errstate(invalid="ignore", over="ignore"):
        w = np.exp(lw - mx[:, None])
    post = np.where(support, pred * w, 0.0)
    s = _row_sum(post)
    bad = ~(s > 0) | ~np.isfinite(s)
    if bad.any():
        post[bad] = _correct_extended(pred[bad], lw[bad])
        s[bad] = 1.0
    return post / s[:, None]


def _correct_extended(pred: np.ndarray, lw: np.ndarray) -> np.ndarray:
    """Retry in log space with long doubles; raise if nothing survives."""
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = np.log(pred.astype(np.longdouble)) + lw.astype(np.longdouble)
    lp = np.where(pred > 0, lp, -np.inf)
    mx = np.max(lp, axis=1)
    if not np.all(np.isfinite(mx)):
        raise DegenerateWeight("observation has zero likelihood on the filter's support")
    post = np.exp(lp - mx[:, None])
    return (post / post.sum(axis=1, keepdims=True)).astype(float)


def _tv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 0.5 * _row_sum(np.abs(a - b))


def filter_step(
    m: FiniteHmm, pi, dY: float, dt: float, transition: Optional[np.ndarray] = None
) -> np.ndarray:
    """One prediction/correction step of the discretized Wonham filter."""
    E = prediction_matrix(m, dt) if transition is None else transition
    pi = np.asarray(pi, dtype=float)[None, :]
    lw = _Likelihood(m, dt).log_weights(np.array([float(dY)]))
    return _correct(_predict(pi, E), lw)[0]


@dataclass
class FilterPairTrajectory:
    """Recorded history of one path.

    ``obs_increments[k]`` is Y(times[k]) - Y(times[k-1]) (0 at time 0), so
    it sums several grid increments when record_stride > 1.
    """

    path_index: int
    times: np.ndarray
    signal_states: np.ndarray
    obs_increments: np.ndarray
    pi_mu: np.ndarray
    pi_nu: np.ndarray
    tv: np.ndarray


@dataclass
class PairSummary:
    checkpoints: list[float]
    mean_tv: list[float]
    median_tv: list[float]
    q90_tv: list[float]
    terminal_tv: list[float] = field(repr=False)

    @classmethod
    def from_samples(cls, times: np.ndarray, tv: np.ndarray) -> "PairSummary":
        """``tv`` has one row per path and one column per checkpoint."""
        return cls(
            checkpoints=[float(t) for t in times],
            mean_tv=np.mean(tv, axis=0).tolist(),
            median_tv=np.median(tv, axis=0).tolist(),
            q90_tv=np.quantile(tv, 0.9, axis=0).tolist(),
            terminal_tv=tv[:, -1].tolist(),
        )

    @property
    def mean_terminal_tv(self) -> float:
        return self.mean_tv[-1]

    @property
    def median_terminal_tv(self) -> float:
        return self.median_tv[-1]

    def to_dict(self) -> dict:
        return {
            "checkpoints": self.checkpoints,
            "mean_tv": self.mean_tv,
            "median_tv": self.median_tv,
            "q90_tv": self.q90_tv,
            "terminal_tv": self.terminal_tv,
        }


@dataclass
class PairRun:
    trajectories: list[FilterPairTrajectory]
    summary: PairSummary


def _sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(p)
    return int(min(np.searchsorted(cum, rng.random() * cum[-1], side="right"), len(p) - 1))


def _run_block(m, init, cfg, E, lik, paths, ck_steps):
    n, dt = cfg.n_steps, cfg.dt
    P = len(paths)
    dY = np.empty((P, n))
    xs = np.empty((P, n + 1), dtype=np.int64)
    for row, i in enumerate(paths):
        sig_rng, obs_rng = path_streams(cfg.seed, i)
        x0 = _sample_index(init.mu, sig_rng)
        path = simulate_signal(m, x0, n * dt, sig_rng)
        dY[row] = simulate_observations(m, path, n, dt, obs_rng)
        xs[row] = states_on_grid(path, n, dt)

    rec_rows = [r for r, i in enumerate(paths) if i < cfg.record_paths]
    rec_steps = np.arange(0, n + 1, cfg.record_stride)
    if rec_steps[-1] != n:
        rec_steps = np.append(rec_steps, n)
    rec_pos = {int(k): j for j, k in enumerate(rec_steps)}
    R = len(rec_rows)
    rec_mu = np.empty((R, len(rec_steps), m.d))
    rec_nu = np.empty((R, len(rec_steps), m.d))

    ck_pos = {int(k): j for j, k in enumerate(ck_steps)}
    tv_ck = np.empty((P, len(ck_steps)))

    pi_mu = np.tile(init.mu, (P, 1))
    pi_nu = np.tile(init.nu, (P, 1))
    if R:
        rec_mu[:, 0] = pi_mu[rec_rows]
        rec_nu[:, 0] = pi_nu[rec_rows]
    for k in range(1, n + 1):
        lw = lik.log_weights(dY[:, k - 1])
        try:
            pi_mu = _correct(_predict(pi_mu, E), lw)
            pi_nu = _correct(_predict(pi_nu, E), lw)
        except DegenerateWeight as exc:
            raise DegenerateWeight(f"{exc} (paths {paths[0]}..{paths[-1]}, step {k})") from None
        j = ck_pos.get(k)
        if j is not None:
            tv_ck[:, j] = _tv(pi_mu, pi_nu)
        j = rec_pos.get(k)
        if j is not None and R:
            rec_mu[:, j] = pi_mu[rec_rows]
            rec_nu[:, j] = pi_nu[rec_rows]

    trajectories = []
    for r_i, row in enumerate(rec_rows):
        incs = np.zeros(len(rec_steps))
        for j in range(1, len(rec_steps)):
            incs[j] = dY[row, rec_steps[j - 1] : rec_steps[j]].sum()
        trajectories.append(
            FilterPairTrajectory(
                path_index=paths[row],
                times=rec_steps * dt,
                signal_states=xs[row, rec_steps],
                obs_increments=incs,
                pi_mu=rec_mu[r_i],
                pi_nu=rec_nu[r_i],
                tv=_tv(rec_mu[r_i], rec_nu[r_i]),
            )
        )
    return tv_ck, trajectories


def run_pair(m: FiniteHmm, init: InitialPair, cfg: SimConfig, workers: int = 1) -> PairRun:
    """Run filters from mu and nu on common observations, signal drawn from mu."""
    if init.mu.shape[0] != m.d:
        raise ValueError(f"initial laws have length {init.mu.shape[0]}, model has d={m.d}")
    lik = _Likelihood(m, cfg.dt)
    E = prediction_matrix(m, cfg.dt)
    ck_steps = checkpoint_steps(cfg.n_steps, cfg.dt)
    blocks = [
        list(range(s, min(s + BLOCK_SIZE, cfg.n_paths))) for s in range(0, cfg.n_paths, BLOCK_SIZE)
    ]

    def job(paths):
        return _run_block(m, init, cfg, E, lik, paths, ck_steps)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(job, blocks))
    else:
        results = [job(b) for b in blocks]

    tv = np.vstack([r[0] for r in results])
    trajectories = [t for r in results for t in r[1]]
    summary = PairSummary.from_samples(ck_steps * cfg.dt, tv)
    log.debug("run_pair: %d paths, mean terminal tv %.3g", cfg.n_paths, summary.mean_terminal_tv)
    return PairRun(trajectories, summary)


@dataclass
class KappaRow:
    kappa: float
    mean_terminal_tv: float
    summary: PairSummary


def kappa_sweep(
    m: FiniteHmm, init: InitialPair, kappas: Sequence[float], cfg: SimConfig, workers: int = 1
) -> list[KappaRow]:
    """Rerun :func:`run_pair` per noise level; every level reuses the same seeds."""
    if any(not k > 0 for k in kappas):
        raise ValueError("kappa sweep values must all be > 0")
    rows = []
    for k in kappas:
        run = run_pair(m.with_kappa(float(k)), init, cfg, workers)
        rows.append(KappaRow(float(k), run.summary.mean_terminal_tv, run.summary))
    return rows


def write_trajectory_csv(traj: FilterPairTrajectory, path) -> None:
    """CSV with header t,x,dY,pi_mu_1..pi_mu_d,pi_nu_1..pi_nu_d,tv; x is 1-based."""
    d = traj.pi_mu.shape[1]
    header = (
        ["t", "x", "dY"]
        + [f"pi_mu_{i + 1}" for i in range(d)]
        + [f"pi_nu_{i + 1}" for i in range(d)]
        + ["tv"]
    )
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for k in range(len(traj.times)):
            w.writerow(
                [repr(float(traj.times[k])), int(traj.signal_states[k]) + 1, repr(float(traj.obs_increments[k]))]
                + [repr(float(v)) for v in traj.pi_mu[k]]
                + [repr(float(v)) for v in traj.pi_nu[k]]
                + [repr(float(traj.tv[k]))]
            )
