"""Command-line front end.

Models are JSON files or ``presets:<name>``. Every invocation ends with one
line ``RESULT <exit_code> <report_path|->`` on stdout. Exit codes: 0 ok,
1 bad input (schema, validation, refused hypotheses), 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import chain, kalman, observability, verdict, wonham
from .model import InitialPair, InvalidModel, builtin_presets, load_model
from .numlin import EigenFailure, NonFinite

PRESET_PREFIX = "presets:"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _load_hmm(source: str):
    """Return (model, default initial pair or None, display name)."""
    if source.startswith(PRESET_PREFIX):
        name = source[len(PRESET_PREFIX):]
        presets = builtin_presets()
        if name not in presets:
            raise UsageError(f"unknown preset {name!r}; available: {', '.join(presets)}")
        m, pair = presets[name]
        return m, pair, name
    path = Path(source)
    if not path.is_file():
        raise UsageError(f"{source}: file not found")
    try:
        return load_model(path), None, path.stem
    except json.JSONDecodeError as exc:
        raise UsageError(f"{source}: invalid JSON ({exc})") from None


def _load_linear(source: str):
    if source.startswith(PRESET_PREFIX):
        name = source[len(PRESET_PREFIX):]
        presets = kalman.linear_presets()
        if name not in presets:
            raise UsageError(f"unknown linear preset {name!r}; available: {', '.join(presets)}")
        return presets[name], name
    path = Path(source)
    if not path.is_file():
        raise UsageError(f"{source}: file not found")
    try:
        return kalman.load_linear_model(path), path.stem
    except json.JSONDecodeError as exc:
        raise UsageError(f"{source}: invalid JSON ({exc})") from None


def _yn(v) -> str:
    return "n/a" if v is None else ("yes" if v else "no")


def cmd_analyze(args) -> tuple[int, Optional[Path]]:
    m, _, name = _load_hmm(args.model)
    obs = observability.observable_space(m)
    dec = chain.decompose(m)
    rep = verdict.assess(m, obs, dec)

    out = rep.to_dict()
    out["model"] = {"name": name, **m.to_dict()}
    out["observable_space"] = {
        "dim_O": obs.O.dim,
        "basis_O": obs.O.basis.tolist(),
        "basis_N": obs.N.basis.tolist(),
        "iterations_used": obs.iterations_used,
        "shortcut_used": obs.shortcut_used.value,
        "linear_rank_test": observability.linear_rank_test(m),
    }
    out["chain"] = {
        "ergodic_classes": [[i + 1 for i in c] for c in dec.ergodic_classes],
        "transient": [i + 1 for i in dec.transient],
        "stationary": [p.tolist() for p in dec.stationary],
        "indicator_in_O": chain.indicator_in_O_check(m, dec, obs),
    }
    lines = [
        f"model {name}: d={m.d}, kappa={m.kappa:g}, {m.obs_kind.value}",
        f"  observable     {_yn(rep.observable)}   (dim O = {obs.O.dim}, dim N = {obs.N.dim})",
        f"  detectable     {_yn(rep.detectable)}   (max Re on N: {rep.detect_evidence.max_real_part})",
        f"  stable         {_yn(rep.stable)}   [{rep.stable_note}]",
        f"  strong-stable  {_yn(rep.strong_stable)}   [{rep.strong_stable_note}]",
        f"  ergodic classes {dec.num_classes}, transient states {len(dec.transient)}",
    ]
    if args.oracle_depth is not None:
        deltas = _floats(args.deltas, "--deltas")
        bf = observability.brute_force_O(m, args.oracle_depth, deltas)
        contained = obs.O.contains_subspace(bf)
        out["oracle"] = {
            "depth": args.oracle_depth,
            "deltas": deltas,
            "dim": bf.dim,
            "contained_in_O": contained,
            "dims_equal": bf.dim == obs.O.dim,
        }
        lines.append(f"  oracle depth {args.oracle_depth}: dim {bf.dim}, contained in O: {_yn(contained)}")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    _dump_json(out, path)
    print("\n".join(lines))
    return 0, path


def _tv_table(summary: wonham.PairSummary) -> str:
    rows = ["       t      mean_tv    median_tv       q90_tv"]
    for t, a, b, c in zip(summary.checkpoints, summary.mean_tv, summary.median_tv, summary.q90_tv):
        rows.append(f"{t:8.4g} {a:12.4e} {b:12.4e} {c:12.4e}")
    return "\n".join(rows)


def cmd_simulate(args) -> tuple[int, Optional[Path]]:
    m, pair, name = _load_hmm(args.model)
    if args.mu is not None or args.nu is not None or pair is None:
        if args.mu is None or args.nu is None:
            raise UsageError("--mu and --nu are both required for model files")
        try:
            pair = InitialPair(_floats(args.mu, "--mu"), _floats(args.nu, "--nu"))
        except ValueError as exc:
            raise UsageError(f"bad initial law: {exc}") from None
    if pair.mu.shape[0] != m.d:
        raise UsageError(f"--mu/--nu have length {pair.mu.shape[0]} but the model has d={m.d}")
    if args.kappa is not None:
        m = m.with_kappa(args.kappa)
    sweep = _floats(args.kappa_sweep, "--kappa-sweep") if args.kappa_sweep else None
    if sweep is not None and any(k <= 0 for k in sweep):
        raise UsageError("--kappa-sweep values must be > 0")
    if sweep is None and m.obs_kind.value == "white_noise" and not m.kappa > 0:
        raise UsageError("white-noise model has kappa=0; the filter needs kappa>0 (or use --kappa-sweep)")

    dt = args.dt
    if dt is None:
        dt = min(wonham.default_dt(m.with_kappa(k)) for k in sweep) if sweep else wonham.default_dt(m)
    try:
        cfg = wonham.SimConfig(
            t_max=args.t_max, dt=dt, n_paths=args.paths, seed=args.seed,
            record_stride=args.record_stride, record_paths=args.record_paths,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not pair.mu_abs_cont_nu:
        print("note: mu is not absolutely continuous w.r.t. nu; stability theorems do not cover this pair")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_meta = {
        "model": name,
        "mu": pair.mu.tolist(),
        "nu": pair.nu.tolist(),
        "t_max": cfg.t_max,
        "dt": cfg.dt,
        "n_paths": cfg.n_paths,
        "seed": cfg.seed,
    }
    if sweep is not None:
        rows = wonham.kappa_sweep(m, pair, sweep, cfg, workers=args.threads)
        report = {
            "run": run_meta,
            "kappas": [r.kappa for r in rows],
            "mean_terminal_tv": [r.mean_terminal_tv for r in rows],
            "summaries": [r.summary.to_dict() for r in rows],
        }
        path = out_dir / "sweep.json"
        _dump_json(report, path)
        print(f"kappa sweep on {name}, t_max={cfg.t_max:g}, dt={cfg.dt:g}, {cfg.n_paths} paths")
        print("     kappa  mean_terminal_tv")
        for r in rows:
            print(f"{r.kappa:10.4g}  {r.mean_terminal_tv:16.6e}")
        return 0, path

    run = wonham.run_pair(m, pair, cfg, workers=args.threads)
    for traj in run.trajectories:
        wonham.write_trajectory_csv(traj, out_dir / f"path_{traj.path_index:04d}.csv")
    path = out_dir / "summary.json"
    _dump_json({**run.summary.to_dict(), "run": run_meta}, path)
    print(f"{name}: {cfg.n_paths} paths, t_max={cfg.t_max:g}, dt={cfg.dt:g}, kappa={m.kappa:g}")
    print(_tv_table(run.summary))
    return 0, path


def cmd_kalman(args) -> tuple[int, Optional[Path]]:
    lm, name = _load_linear(args.model)
    hw = kalman.hautus_detectable(lm.A, lm.C)
    if not hw.detectable:
        print(f"refused: (A, C) not detectable, witness eigenvalue {kalman._fmt_eig(hw.witness)}", file=sys.stderr)
        return 1, None
    if not (args.dt > 0 and args.t_max > 0):
        raise UsageError("--t-max and --dt must be positive")
    trace = kalman.riccati_flow(lm, args.t_max, args.dt)
    summary = kalman.kalman_pair_experiment(
        lm, args.t_max, args.dt, args.paths, args.seed, workers=args.threads, trace=trace
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kalman.write_gap_csv(summary, out_dir / "riccati_gap.csv", stride=args.csv_stride)
    path = out_dir / "kalman_summary.json"
    _dump_json(
        {**summary.to_dict(), "run": {"model": name, "t_max": args.t_max, "dt": args.dt,
                                      "n_paths": args.paths, "seed": args.seed}},
        path,
    )
    print(f"{name}: n={lm.n}, t_max={args.t_max:g}, dt={args.dt:g}, {args.paths} paths")
    print("       t          gap   mean|xhat-xhat'|")
    for t, g, x in zip(summary.checkpoints, summary.checkpoint_gap, summary.checkpoint_mean_xdiff):
        print(f"{t:8.4g} {g:12.4e} {x:16.4e}")
    return 0, path


def cmd_presets(args) -> tuple[int, Optional[Path]]:
    for name, (m, pair) in builtin_presets().items():
        print(f"{name}: d={m.d} h={m.h.tolist()} kappa={m.kappa:g} mu={pair.mu.tolist()} nu={pair.nu.tolist()}")
    for name, lm in kalman.linear_presets().items():
        print(f"{name} (linear): n={lm.n} A={lm.A.tolist()} C={lm.C.tolist()}")
    return 0, None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wonhamstab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="observability / detectability / stability verdicts")
    a.add_argument("model")
    a.add_argument("--oracle-depth", type=int, default=None)
    a.add_argument("--deltas", default="0.3,0.7,1.1")
    a.add_argument("--out-dir", default="out")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="Monte-Carlo filter pairs")
    s.add_argument("model")
    s.add_argument("--mu")
    s.add_argument("--nu")
    s.add_argument("--kappa", type=float, default=None, help="override the model's kappa")
    s.add_argument("--t-max", type=float, default=10.0)
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--paths", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default="out")
    s.add_argument("--kappa-sweep", default=None, help="comma-separated kappa values")
    s.add_argument("--record-paths", type=int, default=5)
    s.add_argument("--record-stride", type=int, default=1)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    k = sub.add_parser("kalman", help="Riccati flow and Kalman filter pairs")
    k.add_argument("model")
    k.add_argument("--t-max", type=float, default=20.0)
    k.add_argument("--dt", type=float, default=1e-3)
    k.add_argument("--paths", type=int, default=200)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out-dir", default="out")
    k.add_argument("--csv-stride", type=int, default=1)
    k.add_argument("--threads", type=int, default=1)
    k.set_defaults(func=cmd_kalman)

    pr = sub.add_parser("presets", help="list built-in models")
    pr.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    code, path = 2, None
    try:
        args = build_parser().parse_args(argv)
        code, path = args.func(args)
    except SystemExit as exc:  # --help
        code = 0 if exc.code in (0, None) else 1
    except (UsageError, InvalidModel, kalman.InvalidLinearModel, observability.ExplosionGuard) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 1
    except kalman.NotDetectable as exc:
        print(f"refused: {exc}", file=sys.stderr)
        code = 1
    except (
        wonham.DegenerateWeight,
        kalman.PSDLost,
        NonFinite,
        EigenFailure,
        verdict.InvarianceViolation,
        verdict.VerdictInconsistency,
    ) as exc:
        print(f"numerical error ({type(exc).__name__}): {exc}", file=sys.stderr)
        code = 2
    print(f"RESULT {code} {path if path is not None else '-'}")
    sys.stdout.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
