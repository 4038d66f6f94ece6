"""Local pretraining and the distributed solvers (DGD, DCGD, DIANA).

All three solvers share one round loop: clients evaluate
``alpha_i grad f_i(T_i(x^k))``, optionally compress what they upload, and the
server averages in client order and takes a step. Only uplink floats are
counted.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from flixlab.compression import CompressorSpec, client_rng, compress
from flixlab.errors import ConvergenceFailure, Diverged, InternalConsistencyError, InvalidArgument, InvalidState
from flixlab.flix_core import FlixProblem, aggregate_constants, one_shot_average
from flixlab.objectives import QuadraticObjective
from flixlab.parallel import client_map, ordered_mean

logger = logging.getLogger(__name__)

THEORETICAL = "theoretical"


def solve_local(obj, tol: float = 1e-6, max_iter: int = 1_000_000) -> np.ndarray:
    """Pure local model: gradient descent from zero with step ``1/L`` until ``|grad| <= tol``.

    Quadratics start from the direct solve instead and only fall back to
    gradient steps if that point misses the certificate.
    """
    if isinstance(obj, QuadraticObjective):
        x = obj.minimizer.copy()
    else:
        x = np.zeros(obj.dim)
    step = 1.0 / obj.constants.L
    g = obj.grad(x)
    gn = float(np.linalg.norm(g))
    it = 0
    while gn > tol:
        if it >= max_iter:
            raise ConvergenceFailure(
                f"local solve stopped after {max_iter} iterations with |grad| = {gn:.3e}",
                grad_norm=gn,
                iterations=it,
            )
        x = x - step * g
        g = obj.grad(x)
        gn = float(np.linalg.norm(g))
        it += 1
    return x


def prepare_problem(clients, alpha, tol: float = 1e-6, max_iter: int = 1_000_000) -> FlixProblem:
    """Solve every client locally and wrap the result as a ``FlixProblem``."""
    clients = list(clients)
    xs = client_map(lambda i: solve_local(clients[i], tol, max_iter), len(clients))
    return FlixProblem(clients, alpha, np.stack(xs), local_tolerance=tol)


@dataclass(eq=False)
class Trajectory:
    rounds: np.ndarray
    values: np.ndarray
    grad_norm_sq: np.ndarray
    uplink_floats: np.ndarray
    x_final: np.ndarray
    loss_gap: np.ndarray | None = None
    deploy_dist_sq: np.ndarray | None = None
    iterates: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    state: DianaState | None = None

    def __len__(self):
        return len(self.rounds)


@dataclass(eq=False)
class DianaState:
    memories: np.ndarray
    average: np.ndarray
    beta: np.ndarray

    def drift(self) -> float:
        return float(np.max(np.abs(self.average - ordered_mean(self.memories))))


def _check_active(p: FlixProblem):
    if not np.any(p.alpha > 0):
        raise InvalidState("every alpha_i is zero; the objective is constant")


def _initial_point(p: FlixProblem, init):
    if isinstance(init, str):
        if init != "one_shot":
            raise InvalidArgument(f"unknown init {init!r}")
        return one_shot_average(p).x_avg, "one_shot"
    x0 = np.asarray(init, dtype=np.float64)
    if x0.shape != (p.d,):
        raise InvalidArgument(f"initial point must have dimension {p.d}")
    return x0.copy(), "given"


def _resolve_specs(p: FlixProblem, specs):
    if isinstance(specs, CompressorSpec):
        specs = [specs] * p.n
    specs = list(specs)
    if len(specs) != p.n or any(s.d != p.d for s in specs):
        raise InvalidArgument("need one compressor of dimension d per client")
    return specs


def dgd_stepsize(p: FlixProblem) -> float:
    return 1.0 / aggregate_constants(p).L_alpha


def dcgd_stepsize(p: FlixProblem, specs) -> float:
    specs = _resolve_specs(p, specs)
    c = aggregate_constants(p)
    omega = np.array([s.omega for s in specs])
    denom = c.L_alpha + 2 * np.max(p.L * p.alpha**2 * omega) / p.n
    return 1.0 / denom if c.mu_alpha > 0 else 1.0 / (4 * denom)


def diana_learning_rates(specs) -> np.ndarray:
    return np.array([1.0 / (s.omega + 1.0) for s in specs])


def diana_stepsize(p: FlixProblem, specs, beta=None) -> float:
    specs = _resolve_specs(p, specs)
    c = aggregate_constants(p)
    omega = np.array([s.omega for s in specs])
    beta = diana_learning_rates(specs) if beta is None else np.asarray(beta, dtype=np.float64)
    a2L = p.L * p.alpha**2
    denom = (
        c.L_alpha
        + 2 * np.max(a2L * omega) / p.n
        + 4 * np.max(beta * omega * a2L) / (p.n * np.min(beta))
    )
    return 1.0 / denom if c.mu_alpha > 0 else 1.0 / (4 * denom)


def _resolve_gamma(mode, theoretical):
    if mode == THEORETICAL:
        return theoretical(), THEORETICAL
    gamma = float(mode)
    if not gamma > 0:
        raise InvalidArgument(f"manual stepsize must be positive, got {mode}")
    return gamma, "manual"


def _debug_enabled(debug):
    if debug is not None:
        return debug
    return os.environ.get("FLIX_DEBUG", "") not in ("", "0")


def _run(p, x0, gamma, K, estimator, payload, reference, keep_iterates, meta):
    if K < 0:
        raise InvalidArgument("K must be >= 0")
    # overflow shows up as a non-finite value and is reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_rounds(p, x0, gamma, K, estimator, payload, reference, keep_iterates, meta)


def _run_rounds(p, x0, gamma, K, estimator, payload, reference, keep_iterates, meta):
    x = x0
    rounds, values, gns, uplink = [], [], [], []
    iterates = [] if keep_iterates else None
    ref_x = getattr(reference, "x_star", None)
    ref_f = getattr(reference, "f_star", None)
    ref_deployed = p.deployed_models(ref_x) if ref_x is not None else None
    dists = [] if ref_x is not None else None
    sent = 0
    for k in range(K + 1):
        grads = p.client_grads(x)
        full = ordered_mean(grads)
        val = p.value(x)
        if not np.isfinite(val) or not np.all(np.isfinite(full)):
            raise Diverged(f"non-finite objective or gradient at round {k}", round_index=k)
        rounds.append(k)
        values.append(val)
        gns.append(float(full @ full))
        uplink.append(sent)
        if iterates is not None:
            iterates.append(x.copy())
        if dists is not None:
            diff = p.deployed_models(x) - ref_deployed
            dists.append(float(np.mean(np.einsum("ij,ij->i", diff, diff))))
        if k == K:
            break
        g = estimator(k, x, grads, full)
        x = x - gamma * g
        if not np.all(np.isfinite(x)):
            raise Diverged(f"non-finite iterate after round {k}", round_index=k + 1)
        sent += payload
    values = np.array(values)
    traj = Trajectory(
        rounds=np.array(rounds),
        values=values,
        grad_norm_sq=np.array(gns),
        uplink_floats=np.array(uplink, dtype=np.int64),
        x_final=x,
        loss_gap=values - ref_f if ref_f is not None else None,
        deploy_dist_sq=np.array(dists) if dists is not None else None,
        iterates=np.array(iterates) if iterates is not None else None,
        meta=dict(meta, gamma=gamma, K=K, n=p.n, d=p.d, alpha=p.alpha.tolist()),
    )
    return traj


def run_dgd(p: FlixProblem, mode=THEORETICAL, K: int = 100, init="one_shot", *,
            reference=None, keep_iterates=False) -> Trajectory:
    """Distributed gradient descent; theoretical step ``1/L_alpha``, start at ``x_avg``."""
    _check_active(p)
    x0, init_kind = _initial_point(p, init)
    gamma, gmode = _resolve_gamma(mode, lambda: dgd_stepsize(p))
    meta = dict(algorithm="dgd", stepsize_mode=gmode, init=init_kind, omega=[0.0] * p.n,
                init_uplink_floats=p.n * p.d if init_kind == "one_shot" else 0)
    return _run(p, x0, gamma, K, lambda k, x, grads, full: full, p.n * p.d,
                reference, keep_iterates, meta)


def _compress_all(p, specs, vectors, seed, k):
    def one(i):
        s = specs[i]
        rng = client_rng(seed, i, k) if s.k < s.d else None
        return compress(s, vectors[i], rng)

    return client_map(one, p.n)


def dcgd_step(p: FlixProblem, x, specs, gamma: float, seed: int, round_index: int = 0) -> np.ndarray:
    """One compressed round from ``x``; exposed for Monte-Carlo checks."""
    specs = _resolve_specs(p, specs)
    grads = p.client_grads(x)
    return x - gamma * ordered_mean(_compress_all(p, specs, grads, seed, round_index))


def run_dcgd(p: FlixProblem, specs, mode=THEORETICAL, K: int = 100, seed: int = 0, init="one_shot", *,
             reference=None, keep_iterates=False) -> Trajectory:
    """Distributed compressed gradient descent with per-client compressors."""
    _check_active(p)
    specs = _resolve_specs(p, specs)
    x0, init_kind = _initial_point(p, init)
    gamma, gmode = _resolve_gamma(mode, lambda: dcgd_stepsize(p, specs))

    def estimator(k, x, grads, full):
        return ordered_mean(_compress_all(p, specs, grads, seed, k))

    meta = dict(algorithm="dcgd", stepsize_mode=gmode, init=init_kind, seed=seed,
                omega=[s.omega for s in specs], k=[s.k for s in specs],
                init_uplink_floats=p.n * p.d if init_kind == "one_shot" else 0)
    return _run(p, x0, gamma, K, estimator, sum(s.payload for s in specs),
                reference, keep_iterates, meta)


def run_diana(p: FlixProblem, specs, mode=THEORETICAL, K: int = 100, seed: int = 0, init="one_shot", *,
              beta=None, reference=None, keep_iterates=False, debug=None) -> Trajectory:
    """DIANA: clients compress gradient differences against learned memories ``h_i``."""
    _check_active(p)
    specs = _resolve_specs(p, specs)
    x0, init_kind = _initial_point(p, init)
    lr = diana_learning_rates(specs) if beta is None else np.asarray(beta, dtype=np.float64)
    if lr.shape != (p.n,) or np.any(lr <= 0) or np.any(lr > diana_learning_rates(specs) * (1 + 1e-12)):
        raise InvalidArgument("memory learning rates must satisfy 0 < beta_i <= 1/(omega_i + 1)")
    gamma, gmode = _resolve_gamma(mode, lambda: diana_stepsize(p, specs, lr))
    debug = _debug_enabled(debug)

    h0 = np.stack(p.client_grads(x0))
    state = DianaState(memories=h0, average=ordered_mean(h0), beta=lr)

    def estimator(k, x, grads, full):
        deltas = [grads[i] - state.memories[i] for i in range(p.n)]
        sent = _compress_all(p, specs, deltas, seed, k)
        g = state.average + ordered_mean(sent)
        for i in range(p.n):
            state.memories[i] = state.memories[i] + lr[i] * sent[i]
        state.average = state.average + ordered_mean([lr[i] * sent[i] for i in range(p.n)])
        if debug:
            drift = state.drift()
            if drift > 1e-10 * max(1.0, float(np.max(np.abs(state.average)))):
                raise InternalConsistencyError(f"memory average drifted by {drift:.3e} at round {k}")
        return g

    meta = dict(algorithm="diana", stepsize_mode=gmode, init=init_kind, seed=seed,
                omega=[s.omega for s in specs], k=[s.k for s in specs], beta_i=lr.tolist(),
                init_uplink_floats=p.n * p.d if init_kind == "one_shot" else 0)
    traj = _run(p, x0, gamma, K, estimator, sum(s.payload for s in specs),
                reference, keep_iterates, meta)
    traj.state = state
    return traj
