"""Reference optima, closed-form oracles and executable bound checks.

Every checker returns ``CheckResult`` records (measured value against the
bound it must respect) instead of raising, so a suite can report all
failures at once.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from flixlab.compression import CompressorSpec, compress
from flixlab.data_io import gen_synthetic
from flixlab.errors import ConvergenceFailure, FlixError, InvalidState, Unsupported
from flixlab.flix_core import (
    FlixProblem,
    aggregate_constants,
    deployed_variance,
    max_pairwise_sq_distance,
    one_shot_average,
    population_variance,
)
from flixlab.objectives import QuadraticObjective
from flixlab.parallel import ordered_mean
from flixlab.solvers import (
    THEORETICAL,
    dcgd_stepsize,
    prepare_problem,
    run_dcgd,
    run_dgd,
    run_diana,
)

EPS = np.finfo(np.float64).eps
CONVEX_SLACK = 1e-8


@dataclass(frozen=True, eq=False)
class ReferenceOptimum:
    x_star: np.ndarray
    f_star: float
    certificate: float


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    bound: float
    detail: str = ""

    def to_dict(self):
        d = asdict(self)
        d["passed"] = bool(d["passed"])
        for key in ("measured", "bound"):
            v = d[key]
            d[key] = None if v is None or not math.isfinite(v) else float(v)
        return d


@dataclass
class Report:
    checks: list = field(default_factory=list)
    seed: int | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, result):
        if isinstance(result, CheckResult):
            self.checks.append(result)
        else:
            self.checks.extend(result)
        return result

    def to_dict(self):
        return {
            "format": "flix-verify-report",
            "version": 1,
            "seed": self.seed,
            "passed": bool(self.passed),
            "checks": [c.to_dict() for c in self.checks],
        }


def value_noise_floor(f_star: float) -> float:
    """Absolute resolution of computed objective gaps near ``f_star``."""
    return 100 * EPS * max(1.0, abs(f_star))


# ---------------------------------------------------------------- oracles


def quad_flix_minimizer(p: FlixProblem) -> np.ndarray:
    """Solve ``(sum a_i^2 A_i) x = sum a_i^2 A_i x_i`` directly."""
    if not all(isinstance(c, QuadraticObjective) for c in p.clients):
        raise Unsupported("closed-form minimizer needs quadratic clients")
    a2 = p.alpha**2
    M = sum(a2[i] * p.clients[i].A for i in range(p.n))
    rhs = sum(a2[i] * (p.clients[i].A @ p.local_models[i]) for i in range(p.n))
    try:
        return scipy.linalg.solve(M, rhs, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise InvalidState(f"singular FLIX system: {exc}") from exc
    except ValueError as exc:
        raise InvalidState(f"singular FLIX system: {exc}") from exc


def high_precision_optimum(p: FlixProblem, tol: float = 1e-12, max_iter: int = 500_000) -> ReferenceOptimum:
    """Minimizer used as ground truth for loss gaps.

    Quadratic problems use the direct solve. Otherwise gradient descent at
    ``1/L_alpha`` from ``x_avg`` runs until ``|grad| <= tol`` (``1e-10`` when the
    problem is only convex).
    """
    if not np.any(p.alpha > 0):
        raise InvalidState("every alpha_i is zero; the minimizer is not unique")
    c = aggregate_constants(p)
    if all(isinstance(cl, QuadraticObjective) for cl in p.clients):
        x = quad_flix_minimizer(p)
        return ReferenceOptimum(x, p.value(x), float(np.linalg.norm(p.grad(x))))
    if c.mu_alpha <= 0:
        tol = max(tol, 1e-10)
    gamma = 1.0 / c.L_alpha
    x = one_shot_average(p).x_avg
    g = p.grad(x)
    gn = float(np.linalg.norm(g))
    it = 0
    while gn > tol:
        if it >= max_iter:
            raise ConvergenceFailure(f"reference solve stalled at |grad| = {gn:.3e}", gn, it)
        x = x - gamma * g
        g = p.grad(x)
        gn = float(np.linalg.norm(g))
        it += 1
    return ReferenceOptimum(x, p.value(x), gn)


def check_quad_finetune(A, b, x0, gamma: float, H: int) -> float:
    """Max coordinate gap between ``H`` GD steps and ``(I - J^H) x_i + J^H x0``."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x0, dtype=np.float64).copy()
    for _ in range(H):
        x = x - gamma * (A @ x - b)
    x_loc = scipy.linalg.solve(A, b, assume_a="pos")
    d = len(b)
    J = np.eye(d) - gamma * A
    JH = np.eye(d)
    for _ in range(H):
        JH = JH @ J
    closed = (np.eye(d) - JH) @ x_loc + JH @ np.asarray(x0, dtype=np.float64)
    return float(np.max(np.abs(x - closed))) if d else 0.0


def dcgd_floor(p: FlixProblem, specs, gamma: float, ref: ReferenceOptimum) -> float:
    """``2 gamma / (mu_alpha n^2) * sum_i omega_i |alpha_i grad f_i(T_i(x*))|^2``."""
    if isinstance(specs, CompressorSpec):
        specs = [specs] * p.n
    mu_alpha = aggregate_constants(p).mu_alpha
    if mu_alpha <= 0:
        raise Unsupported("the neighbourhood bound needs mu_alpha > 0")
    total = 0.0
    for i, s in enumerate(specs):
        g = p.flix_grad_client(i, ref.x_star)
        total += s.omega * float(g @ g)
    return 2 * gamma / (mu_alpha * p.n**2) * total


def estimate_smoothness(p: FlixProblem, samples: int = 200, seed: int = 0) -> float:
    """Largest observed ``|grad(x) - grad(y)| / |x - y|`` over random pairs."""
    if samples < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    centre = ordered_mean(p.local_models)
    spread = max(1.0, float(np.sqrt(population_variance(p.local_models))))
    best = 0.0
    for _ in range(samples):
        x = centre + spread * rng.standard_normal(p.d)
        y = x + 10.0 ** rng.uniform(-3, 0) * spread * rng.standard_normal(p.d)
        num = np.linalg.norm(p.grad(x) - p.grad(y))
        den = np.linalg.norm(x - y)
        if den > 0:
            best = max(best, float(num / den))
    return best


# ---------------------------------------------------------------- checks


def _first_violation(measured, bound, slack):
    bad = np.nonzero(measured > bound + slack)[0]
    return int(bad[0]) if len(bad) else None


def _series_check(name, measured, bound, slack, what):
    first = _first_violation(measured, bound, slack)
    worst = int(np.argmax(measured - bound))
    detail = f"{what}; " + ("no violations" if first is None else f"first violation at round {first}")
    return CheckResult(name, first is None, float(measured[worst]), float(bound[worst]), detail)


def check_dgd_rate(p: FlixProblem, traj, ref: ReferenceOptimum) -> list[CheckResult]:
    """Contraction and initialization-aware bounds along a DGD trajectory."""
    c = aggregate_constants(p)
    het = one_shot_average(p)
    k = traj.rounds.astype(np.float64)
    gap = traj.values - ref.f_star
    slack = value_noise_floor(ref.f_star)
    if c.mu_alpha <= 0:
        slack = max(slack, CONVEX_SLACK)
    rate = 1.0 - c.mu_alpha / c.L_alpha
    out = [
        _series_check("dgd_pointwise_contraction", gap, rate**k * gap[0], slack,
                      f"(1 - mu_a/L_a)^k (f(x0) - f*), rate {rate:.6g}")
    ]
    a_max = float(np.max(p.alpha))
    out.append(_series_check("dgd_heterogeneous_bound", gap, rate**k * a_max**2 * c.L_hat * het.D / 2, slack,
                             "(1 - mu_a/L_a)^k a_max^2 L_hat D / 2"))
    beta = p.equal_alpha()
    if beta is not None:
        rate_hat = 1.0 - c.mu_hat / c.L_hat
        out.append(_series_check("dgd_equal_alpha_bound", gap, rate_hat**k * beta**2 * c.L_hat * het.V / 2, slack,
                                 "(1 - mu_hat/L_hat)^k beta^2 L_hat V / 2"))
    return out


def check_smoothness(p: FlixProblem, samples=200, seed=0) -> CheckResult:
    L_alpha = aggregate_constants(p).L_alpha
    est = estimate_smoothness(p, samples, seed)
    return CheckResult("flix_smoothness", est <= L_alpha * (1 + 1e-9), est, L_alpha,
                       f"max gradient-Lipschitz ratio over {samples} pairs")


def check_strong_convexity(p: FlixProblem, samples=100, seed=0) -> CheckResult:
    mu_alpha = aggregate_constants(p).mu_alpha
    rng = np.random.default_rng(seed)
    centre = ordered_mean(p.local_models)
    worst = math.inf
    for _ in range(samples):
        x = centre + rng.standard_normal(p.d)
        y = centre + rng.standard_normal(p.d)
        fy = p.value(y)
        lower = fy + p.grad(y) @ (x - y) + 0.5 * mu_alpha * float((x - y) @ (x - y))
        worst = min(worst, p.value(x) - lower + value_noise_floor(fy))
    return CheckResult("flix_strong_convexity", worst >= 0, worst, 0.0,
                       "min over pairs of f(x) - [f(y) + <g(y), x-y> + mu_a/2 |x-y|^2]")


def check_local_average_bounds(p: FlixProblem, samples=50, seed=0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    a2L = p.alpha**2 * p.L
    base = math.fsum(p.clients[i].value(p.local_models[i]) for i in range(p.n)) / p.n
    centre = ordered_mean(p.local_models)
    g_margin, f_margin = math.inf, math.inf
    for _ in range(samples):
        x = centre + 2 * rng.standard_normal(p.d)
        dist = np.linalg.norm(x - p.local_models, axis=1)
        g_bound = float(np.mean(a2L * dist))
        f_bound = base + 0.5 * float(np.mean(a2L * dist**2))
        g_margin = min(g_margin, g_bound * (1 + 1e-9) - float(np.linalg.norm(p.grad(x))))
        f_margin = min(f_margin, f_bound + value_noise_floor(f_bound) - p.value(x))
    return [
        CheckResult("grad_local_average_bound", g_margin >= 0, g_margin, 0.0,
                    "min over x of (1/n) sum a_i^2 L_i |x - x_i| - |grad f(x)|"),
        CheckResult("func_local_average_bound", f_margin >= 0, f_margin, 0.0,
                    "min over x of bound - f(x)"),
    ]


def check_variance_identity(p: FlixProblem, betas=None, seed=0) -> CheckResult:
    betas = np.linspace(0, 1, 11) if betas is None else betas
    rng = np.random.default_rng(seed)
    v_local = population_variance(p.local_models)
    worst = 0.0
    for beta in betas:
        q = p.with_alpha(float(beta))
        x = rng.standard_normal(p.d)
        lhs = deployed_variance(q, x)
        rhs = (1 - beta) ** 2 * v_local
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300) if rhs != 0 else abs(lhs))
    return CheckResult("deployed_variance_identity", worst <= 1e-12, worst, 1e-12,
                       "max relative error of V(T(x)) = (1 - beta)^2 V(x_i)")


def check_distance_bounds(p: FlixProblem, ref: ReferenceOptimum, seed=0) -> list[CheckResult]:
    """Equal-alpha distance-to-optimum bounds in terms of local models."""
    mu_hat = float(np.mean(p.mu))
    rng = np.random.default_rng(seed)
    x0 = ordered_mean(p.local_models) + rng.standard_normal(p.d)
    lhs = float(np.sum((x0 - ref.x_star) ** 2))
    rhs = float(np.mean(p.L * np.sum((x0 - p.local_models) ** 2, axis=1))) / mu_hat
    avg = float(np.mean(np.sum((p.local_models - ref.x_star) ** 2, axis=1)))
    avg_bound = float(np.max(p.L)) / mu_hat * max_pairwise_sq_distance(p.local_models)
    return [
        CheckResult("distance_to_optimum_bound", lhs <= rhs * (1 + 1e-9), lhs, rhs,
                    "|x0 - x*|^2 <= mean(L_i |x0 - x_i|^2) / mu_hat"),
        CheckResult("average_distance_bound", avg <= avg_bound * (1 + 1e-9), avg, avg_bound,
                    "mean |x_i - x*|^2 <= max L_i / mu_hat * max |x_i - x_j|^2"),
    ]


def check_one_shot(p: FlixProblem, epsilon: float, ref: ReferenceOptimum) -> CheckResult:
    gap = p.value(one_shot_average(p).x_avg) - ref.f_star
    return CheckResult("one_shot_epsilon", gap <= epsilon, gap, epsilon, "f(x_avg) - f*")


def compressor_stats(spec: CompressorSpec, v, draws: int = 100_000, seed: int = 0) -> list[CheckResult]:
    """Monte-Carlo unbiasedness, variance and second-moment checks."""
    v = np.asarray(v, dtype=np.float64)
    rng = np.random.default_rng(seed)
    total = np.zeros_like(v)
    total_sq = np.zeros_like(v)
    err_sq = 0.0
    mom_sq = 0.0
    for _ in range(draws):
        c = compress(spec, v, rng)
        total += c
        total_sq += c * c
        diff = c - v
        err_sq += float(diff @ diff)
        mom_sq += float(c @ c)
    mean = total / draws
    var = np.maximum(total_sq / draws - mean**2, 0.0)
    se = np.sqrt(var / draws)
    z = np.where(se > 0, np.abs(mean - v) / np.where(se > 0, se, 1.0), np.where(mean == v, 0.0, np.inf))
    vv = float(v @ v)
    w = spec.omega
    return [
        CheckResult("compressor_unbiased", bool(np.all(z <= 3)), float(np.max(z)), 3.0,
                    "max coordinate |mean - v| in standard errors"),
        CheckResult("compressor_variance", err_sq / draws <= w * vv * 1.05, err_sq / draws, w * vv * 1.05,
                    "mean |C(v) - v|^2 vs omega |v|^2 (1.05)"),
        CheckResult("compressor_second_moment", mom_sq / draws <= (1 + w) * vv * 1.05, mom_sq / draws,
                    (1 + w) * vv * 1.05, "mean |C(v)|^2 vs (1 + omega) |v|^2 (1.05)"),
    ]


def dcgd_neighbourhood(p: FlixProblem, spec: CompressorSpec, ref: ReferenceOptimum, seeds=range(10),
                       K: int = 200) -> dict:
    """Terminal loss gaps of theoretical-step DCGD over several seeds, with the floor."""
    gamma = dcgd_stepsize(p, spec)
    gaps = np.array([run_dcgd(p, spec, THEORETICAL, K, seed=s).values[-1] - ref.f_star for s in seeds])
    return {
        "gamma": gamma,
        "floor": dcgd_floor(p, spec, gamma, ref),
        "gaps": gaps,
        "mean_gap": float(np.mean(gaps)),
        "std_error": float(np.std(gaps, ddof=1) / np.sqrt(len(gaps))) if len(gaps) > 1 else 0.0,
    }


def rounds_to_gap(traj, f_star: float, target: float) -> int | None:
    hit = np.nonzero(traj.values - f_star <= target)[0]
    return int(traj.rounds[hit[0]]) if len(hit) else None


def log_gap_slope(traj, f_star: float, floor: float = 1e-11) -> float:
    """Least-squares slope of ``log(gap)`` per round while the gap exceeds ``floor``."""
    gap = traj.values - f_star
    ok = np.nonzero(gap > floor)[0]
    if len(ok) < 3:
        raise ValueError("too few rounds above the gap floor to fit a slope")
    last = ok[-1]
    idx = np.arange(0, last + 1)
    if np.any(gap[idx] <= 0):
        idx = idx[gap[idx] > 0]
    return float(np.polyfit(traj.rounds[idx], np.log(gap[idx]), 1)[0])


# ---------------------------------------------------------------- desk-scale problems


def two_quadratic_problem(beta: float = 0.5) -> FlixProblem:
    """``f1 = (x - 1)^2 / 2`` and ``f2 = (x + 1)^2 / 2`` in one dimension."""
    clients = [QuadraticObjective([[1.0]], [1.0], 0.5), QuadraticObjective([[1.0]], [-1.0], 0.5)]
    return FlixProblem(clients, beta, np.array([[1.0], [-1.0]]))


def ladder_problem(beta: float = 0.5) -> FlixProblem:
    """Two 2-D quadratics with distinct curvatures, so ``mu_hat < L_hat``."""
    clients = [
        QuadraticObjective(np.diag([1.0, 4.0]), np.diag([1.0, 4.0]) @ np.array([1.0, 1.0])),
        QuadraticObjective(np.diag([2.0, 3.0]), np.diag([2.0, 3.0]) @ np.array([-1.0, -1.0])),
    ]
    return prepare_problem(clients, beta)


def synthetic_logistic_problem(beta: float = 0.5, n: int = 10, d: int = 50, per_client: int = 100,
                               lam: float = 0.1, seed: int = 0, mean_shift: float = 1.0,
                               feature_scale: float = 1.0) -> FlixProblem:
    clients = gen_synthetic("logistic", n, d, per_client, seed, lam=lam, mean_shift=mean_shift,
                            feature_scale=feature_scale)
    return prepare_problem(clients, beta)


def synthetic_quadratic_problem(beta: float = 0.5, n: int = 5, d: int = 4, seed: int = 0,
                                spectrum=(1.0, 10.0)) -> FlixProblem:
    clients = gen_synthetic("quadratic", n, d, seed=seed, spectrum=spectrum)
    return prepare_problem(clients, beta)


# ---------------------------------------------------------------- suite


def _guard(report, name, fn):
    try:
        return report.add(fn())
    except FlixError as exc:
        report.add(CheckResult(name, False, math.nan, math.nan, f"{type(exc).__name__}: {exc}"))
        return None


def default_suite(seed: int = 0, dgd_stepsize_scale: float = 1.0, quick: bool = True) -> Report:
    """Invariant and bound checks on built-in desk-scale problems."""
    report = Report(seed=seed)
    rng = np.random.default_rng(seed)

    # quadratic fine-tuning closed form
    M = rng.standard_normal((5, 5))
    A = M @ M.T + 0.5 * np.eye(5)
    b = rng.standard_normal(5)
    dev = check_quad_finetune(A, b, rng.standard_normal(5), 1.0 / np.linalg.eigvalsh(A)[-1], 20)
    report.add(CheckResult("quad_finetune_closed_form", dev <= 1e-10, dev, 1e-10, "H=20, gamma=1/L"))

    quad = synthetic_quadratic_problem(0.5, seed=seed)
    logi = synthetic_logistic_problem(0.5, n=6, d=10, per_client=40, seed=seed)
    for label, p in (("quadratic", quad), ("logistic", logi)):
        found = [check_smoothness(p, 100, seed), check_strong_convexity(p, 50, seed),
                 *check_local_average_bounds(p, 30, seed)]
        for c in found:
            c.name = f"{c.name}[{label}]"
        report.add(found)
    report.add(check_variance_identity(quad, seed=seed))

    ref_q = high_precision_optimum(quad)
    report.add(check_distance_bounds(quad, ref_q, seed))
    eps = 1e-3
    het = one_shot_average(quad)
    thr = math.sqrt(2 * eps / (float(np.mean(quad.L)) * het.V))
    q_thr = quad.with_alpha(min(thr, 1.0))
    report.add(check_one_shot(q_thr, eps, high_precision_optimum(q_thr)))

    def dgd_checks():
        ref = high_precision_optimum(logi)
        gamma = dgd_stepsize_scale / aggregate_constants(logi).L_alpha
        traj = run_dgd(logi, gamma, 100)
        return check_dgd_rate(logi, traj, ref)

    _guard(report, "dgd_pointwise_contraction", dgd_checks)

    spec = CompressorSpec.rand_k(20, 2)
    report.add(compressor_stats(spec, rng.standard_normal(20), draws=20_000 if quick else 100_000, seed=seed))

    def identity_reduction():
        ident = CompressorSpec.identity(logi.d)
        a = run_dgd(logi, THEORETICAL, 30)
        b_ = run_dcgd(logi, ident, a.meta["gamma"], 30, seed=seed)
        same = bool(np.array_equal(a.values, b_.values))
        return CheckResult("dcgd_identity_matches_dgd", same, float(np.max(np.abs(a.values - b_.values))), 0.0,
                           "identity compressors reproduce DGD bit for bit")

    _guard(report, "dcgd_identity_matches_dgd", identity_reduction)

    def neighbourhood():
        ref = high_precision_optimum(logi)
        spec_l = CompressorSpec.rand_k(logi.d, 1)
        stats = dcgd_neighbourhood(logi, spec_l, ref, seeds=range(seed, seed + 10), K=200)
        bound = stats["floor"] + 3 * stats["std_error"]
        return CheckResult("dcgd_neighbourhood", stats["mean_gap"] <= bound, stats["mean_gap"], bound,
                           "mean terminal loss gap over 10 seeds vs noise floor plus 3 standard errors")

    _guard(report, "dcgd_neighbourhood", neighbourhood)

    def diana():
        ref = high_precision_optimum(logi)
        spec_l = CompressorSpec.rand_k(logi.d, 1)
        traj = run_diana(logi, spec_l, THEORETICAL, 3000, seed=seed, debug=True)
        gap = float(np.min(traj.values - ref.f_star))
        return CheckResult("diana_reaches_optimum", gap <= 1e-10, gap, 1e-10, "best loss gap within 3000 rounds")

    _guard(report, "diana_reaches_optimum", diana)
    return report
