"""Command line entry point: ``flixlab {precompute-local,run,verify,budget}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from flixlab.compression import CompressorSpec, k_sweep
from flixlab.config import ConfigError, RunConfig, build_config, load_config
from flixlab.data_io import gen_synthetic, load_libsvm, logistic_clients
from flixlab.errors import Diverged, FlixError, InvalidArgument, ParseError, Unsupported
from flixlab.flix_core import FlixProblem, comm_budget
from flixlab.parallel import client_map
from flixlab.solvers import THEORETICAL, run_dcgd, run_dgd, run_diana, solve_local
from flixlab.verification import default_suite, high_precision_optimum, value_noise_floor

logger = logging.getLogger("flixlab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CSV_HEADER = "run_id,algorithm,beta,k,round,loss_gap,grad_norm_sq,avg_deploy_dist_sq,uplink_kfloats"
BUNDLE_NAME = "local_models.json"


class UsageError(Exception):
    pass


def fmt(x) -> str:
    return "%.17g" % x


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def out_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out_dir or "flix_out")


# ---------------------------------------------------------------- problem setup


def build_clients(cfg: RunConfig):
    try:
        if cfg.source == "libsvm":
            ds = load_libsvm(cfg.resolved_path(), d=cfg.d, max_rows=cfg.max_rows)
            return logistic_clients(ds, cfg.n, cfg.lam)
        return gen_synthetic(cfg.synthetic_kind, cfg.n, cfg.synthetic_d, cfg.per_client, cfg.problem_seed,
                             spectrum=cfg.spectrum, spread=cfg.spread, mean_shift=cfg.mean_shift, lam=cfg.lam)
    except (InvalidArgument, ParseError) as exc:
        raise UsageError(f"cannot build problem: {exc}") from exc


def solve_bundle(cfg: RunConfig, clients) -> dict:
    xs = client_map(lambda i: solve_local(clients[i], cfg.local_tol, cfg.local_max_iter), len(clients))
    entries = []
    for i, (c, x) in enumerate(zip(clients, xs)):
        entries.append({
            "index": i,
            "L": c.constants.L,
            "mu": c.constants.mu,
            "certificate": float(np.linalg.norm(c.grad(x))),
            "x": [float(v) for v in x],
        })
    return {
        "format": "flix-local-bundle",
        "version": 1,
        "fingerprint": cfg.problem_fingerprint(),
        "n": len(clients),
        "d": clients[0].dim,
        "tolerance": cfg.local_tol,
        "clients": entries,
    }


def bundle_text(bundle: dict) -> str:
    return json.dumps(bundle, indent=1, sort_keys=True) + "\n"


def load_or_build_local(cfg: RunConfig, clients) -> np.ndarray:
    path = out_dir(cfg) / BUNDLE_NAME
    if path.is_file():
        try:
            bundle = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            bundle = None
        if bundle and bundle.get("fingerprint") == cfg.problem_fingerprint():
            return np.array([c["x"] for c in bundle["clients"]], dtype=np.float64)
        logger.info("local bundle at %s is stale; recomputing", path)
    bundle = solve_bundle(cfg, clients)
    atomic_write(path, bundle_text(bundle))
    return np.array([c["x"] for c in bundle["clients"]], dtype=np.float64)


def alpha_settings(cfg: RunConfig):
    """Pairs ``(alpha, beta column value)``."""
    if cfg.alpha_values is not None:
        a = np.array(cfg.alpha_values)
        return [(a, float(np.mean(a)))]
    return [(float(b), float(b)) for b in cfg.alpha_grid]


def k_values(cfg: RunConfig, d: int):
    if cfg.algorithm == "dgd" or cfg.compressor == "identity":
        return [d]
    ks = k_sweep(d, cfg.sweep_count) if cfg.k_sweep else list(cfg.k_values)
    bad = [k for k in ks if not 1 <= k <= d]
    if bad:
        raise UsageError(f"compressor k values {bad} outside [1, {d}]")
    return ks


# ---------------------------------------------------------------- commands


def cmd_precompute_local(cfg: RunConfig) -> int:
    clients = build_clients(cfg)
    path = out_dir(cfg) / BUNDLE_NAME
    bundle = solve_bundle(cfg, clients)
    atomic_write(path, bundle_text(bundle))
    print(f"wrote {path} ({bundle['n']} clients, d={bundle['d']}, "
          f"max certificate {max(c['certificate'] for c in bundle['clients']):.3e})")
    return EXIT_OK


def _run_one(cfg, p, spec, k, seed, ref):
    if cfg.algorithm == "dgd":
        return run_dgd(p, cfg.stepsize, cfg.rounds, reference=ref)
    if cfg.algorithm == "dcgd":
        return run_dcgd(p, spec, cfg.stepsize, cfg.rounds, seed=seed, reference=ref)
    return run_diana(p, spec, cfg.stepsize, cfg.rounds, seed=seed, reference=ref)


def metrics_csv(run_id, algorithm, beta, k, traj) -> str:
    lines = [CSV_HEADER]
    for j in range(len(traj)):
        lines.append(",".join([
            run_id, algorithm, fmt(beta), str(k), str(int(traj.rounds[j])), fmt(traj.loss_gap[j]),
            fmt(traj.grad_norm_sq[j]), fmt(traj.deploy_dist_sq[j]), fmt(traj.uplink_floats[j] / 1000),
        ]))
    return "\n".join(lines) + "\n"


def cmd_run(cfg: RunConfig) -> int:
    clients = build_clients(cfg)
    xs = load_or_build_local(cfg, clients)
    d = clients[0].dim
    ks = k_values(cfg, d)
    root = out_dir(cfg)
    runs, failed = [], False
    for ai, (alpha, beta) in enumerate(alpha_settings(cfg)):
        p = FlixProblem(clients, alpha, xs, local_tolerance=cfg.local_tol)
        try:
            ref = high_precision_optimum(p, cfg.reference_tol)
        except FlixError as exc:
            failed = True
            for k in ks:
                runs.append({"run_id": f"{cfg.algorithm}_a{ai:02d}_k{k}", "algorithm": cfg.algorithm,
                             "beta": beta, "k": k, "status": "invalid", "error": str(exc), "file": None})
            continue
        for k in ks:
            run_id = f"{cfg.algorithm}_a{ai:02d}_k{k}"
            spec = CompressorSpec.identity(d) if k == d and cfg.compressor == "identity" else CompressorSpec.rand_k(d, k)
            entry = {"run_id": run_id, "algorithm": cfg.algorithm, "beta": beta, "k": k,
                     "f_star": ref.f_star, "certificate": ref.certificate}
            try:
                traj = _run_one(cfg, p, spec, k, cfg.seed, ref)
            except Diverged as exc:
                failed = True
                entry.update(status="diverged", error=str(exc), round=exc.round_index, file=None)
                runs.append(entry)
                print(f"{run_id}: diverged at round {exc.round_index}", file=sys.stderr)
                continue
            name = f"{run_id}.csv"
            atomic_write(root / name, metrics_csv(run_id, cfg.algorithm, beta, k, traj))
            entry.update(status="ok", file=name, gamma=traj.meta["gamma"], rounds=int(traj.rounds[-1]),
                         final_loss_gap=float(traj.loss_gap[-1]))
            runs.append(entry)
            print(f"{run_id}: beta={beta:g} k={k} final gap {traj.loss_gap[-1]:.3e}")
    manifest = {
        "format": "flix-run-manifest",
        "version": 1,
        "config": cfg.to_dict() | {"base_dir": None, "out_dir": None},
        "fingerprint": cfg.problem_fingerprint(),
        "local_bundle": BUNDLE_NAME,
        "runs": runs,
    }
    atomic_write(root / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return EXIT_FAIL if failed else EXIT_OK


def load_schema() -> dict:
    return json.loads(resources.files("flixlab").joinpath("report_schema.json").read_text(encoding="utf-8"))


def cmd_verify(cfg: RunConfig) -> int:
    report = default_suite(cfg.seed, dgd_stepsize_scale=cfg.verify_stepsize_scale, quick=not cfg.verify_full)
    data = report.to_dict()
    path = out_dir(cfg) / "verify_report.json"
    atomic_write(path, json.dumps(data, indent=1, sort_keys=True) + "\n")
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: measured {c.measured:.6g}, bound {c.bound:.6g}")
    print(f"report written to {path}")
    return EXIT_OK if report.passed else EXIT_FAIL


def confirm_rungs(base: FlixProblem, sched):
    """Run DGD at the top of every rung and check the promised gap."""
    out = []
    for lo, hi, comms in sched.table():
        if comms == 0:
            out.append((0.0, comms, 0.0, True))
            continue
        beta = min(hi, 1.0)
        if beta <= 0:
            continue
        p = base.with_alpha(beta)
        ref = high_precision_optimum(p)
        traj = run_dgd(p, THEORETICAL, comms - 1)
        gap = float(traj.values[-1] - ref.f_star)
        out.append((beta, comms, gap, gap <= sched.epsilon + value_noise_floor(ref.f_star)))
    return out


def cmd_budget(cfg: RunConfig, epsilon: float | None) -> int:
    eps = epsilon if epsilon is not None else cfg.epsilon
    if eps is None:
        raise UsageError("budget needs --epsilon or budget.epsilon")
    if not eps > 0:
        raise UsageError("epsilon must be positive")
    if cfg.alpha_values is not None:
        raise UsageError("the communication ladder needs equal alpha (alpha.beta or alpha.grid)")
    clients = build_clients(cfg)
    xs = load_or_build_local(cfg, clients)
    base = FlixProblem(clients, cfg.alpha_grid[0], xs, local_tolerance=cfg.local_tol)
    try:
        sched = comm_budget(base, eps)
    except Unsupported as exc:
        raise UsageError(str(exc)) from exc
    print(f"epsilon = {fmt(eps)}")
    print(f"A = {fmt(sched.A)}")
    print(f"q = {fmt(sched.q)}")
    print("beta_lo,beta_hi,communications")
    for lo, hi, comms in sched.table():
        print(f"{fmt(lo)},{fmt(hi)},{comms}")
    print(f"beta = 1 needs {fmt(sched.communications(1.0))} communications; "
          f"ERM gradient rounds bound (L/mu) log(L V / (2 eps)) = {fmt(sched.erm_rounds())}")
    for beta in cfg.alpha_grid:
        print(f"configured beta {fmt(beta)} -> {sched.communications(beta)} communications")
    if not cfg.confirm:
        return EXIT_OK
    ok = True
    for beta, comms, gap, passed in confirm_rungs(base, sched):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} beta={fmt(beta)} communications={comms} gap={gap:.3e}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flixlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("precompute-local", "solve every client locally and write the local-model bundle"),
        ("run", "execute the configured alpha x k sweep and write metrics CSVs"),
        ("verify", "run the built-in bound and invariant checks"),
        ("budget", "print the communication ladder for a target gap"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, required=name != "verify")
        sp.add_argument("--out", type=str, default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="overrides run.seed")
        if name == "budget":
            sp.add_argument("--epsilon", type=float, default=None)
        if name == "verify":
            sp.add_argument("--stepsize-scale", type=float, default=None,
                            help="multiply the DGD stepsize in the rate check (fault injection)")
    return parser


def _config_for(args) -> RunConfig:
    if args.config is None:
        seed = 0 if args.seed is None else args.seed
        return build_config({}, ".", seed, args.out)
    return load_config(args.config, args.seed, args.out)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_for(args)
        if args.command == "verify":
            if args.config is not None and args.seed is None and cfg.seed is None:
                cfg.seed = 0
            if args.stepsize_scale is not None:
                cfg.verify_stepsize_scale = args.stepsize_scale
            return cmd_verify(cfg)
        if args.command == "precompute-local":
            return cmd_precompute_local(cfg)
        if args.command == "run":
            return cmd_run(cfg)
        return cmd_budget(cfg, args.epsilon)
    except (ConfigError, UsageError) as exc:
        print(f"flixlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FlixError as exc:
        print(f"flixlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
