"""The personalized mixture objective and its algorithm-independent quantities.

Client ``i`` deploys ``T_i(x) = alpha_i x + (1 - alpha_i) x_i`` where ``x_i``
minimizes its own loss. The global objective is the mean of
``f_i(T_i(x))`` over clients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from flixlab.errors import InvalidArgument, InvalidState, Unsupported
from flixlab.objectives import ObjectiveConstants
from flixlab.parallel import client_map, ordered_mean, ordered_weighted_sum


def as_alpha(alpha, n: int) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim == 0:
        a = np.full(n, float(a))
    if a.shape != (n,):
        raise InvalidArgument(f"alpha must have {n} entries, got shape {a.shape}")
    if np.any(~np.isfinite(a)) or np.any(a < 0) or np.any(a > 1):
        raise InvalidArgument("every alpha_i must lie in [0, 1]")
    return a


@dataclass(frozen=True)
class AggregateConstants:
    L_alpha: float
    mu_alpha: float
    L_hat: float
    mu_hat: float


@dataclass(frozen=True, eq=False)
class HeterogeneityConstants:
    x_avg: np.ndarray
    weights: np.ndarray
    D: float
    V: float


@dataclass(frozen=True, eq=False)
class FlixProblem:
    clients: tuple
    alpha: np.ndarray
    local_models: np.ndarray
    local_tolerance: float = 1e-6
    constants: tuple = field(default=None)

    def __post_init__(self):
        clients = tuple(self.clients)
        n = len(clients)
        if n == 0:
            raise InvalidArgument("a problem needs at least one client")
        d = clients[0].dim
        if any(c.dim != d for c in clients):
            raise InvalidArgument("client dimensions disagree")
        xs = np.asarray(self.local_models, dtype=np.float64)
        if xs.shape != (n, d):
            raise InvalidArgument(f"local models must have shape {(n, d)}, got {xs.shape}")
        xs = xs.copy()
        xs.setflags(write=False)
        alpha = as_alpha(self.alpha, n)
        alpha.setflags(write=False)
        consts = self.constants
        if consts is None:
            consts = tuple(c.constants for c in clients)
        consts = tuple(consts)
        if len(consts) != n or not all(isinstance(c, ObjectiveConstants) for c in consts):
            raise InvalidArgument("need one ObjectiveConstants per client")
        object.__setattr__(self, "clients", clients)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "local_models", xs)
        object.__setattr__(self, "constants", consts)
        for i, c in enumerate(clients):
            gn = float(np.linalg.norm(c.grad(xs[i])))
            if gn > self.local_tolerance:
                raise InvalidArgument(
                    f"local model {i} is not certified: |grad| = {gn:.3e} > {self.local_tolerance:.1e}"
                )

    @property
    def n(self) -> int:
        return len(self.clients)

    @property
    def d(self) -> int:
        return self.local_models.shape[1]

    @cached_property
    def L(self) -> np.ndarray:
        return np.array([c.L for c in self.constants])

    @cached_property
    def mu(self) -> np.ndarray:
        return np.array([c.mu for c in self.constants])

    def with_alpha(self, alpha) -> "FlixProblem":
        return FlixProblem(self.clients, alpha, self.local_models, self.local_tolerance, self.constants)

    def equal_alpha(self) -> float | None:
        a = self.alpha
        return float(a[0]) if np.all(a == a[0]) else None

    def deploy(self, i: int, x) -> np.ndarray:
        a = self.alpha[i]
        return a * np.asarray(x, dtype=np.float64) + (1.0 - a) * self.local_models[i]

    def deployed_models(self, x) -> np.ndarray:
        return np.stack([self.deploy(i, x) for i in range(self.n)])

    def client_value(self, i: int, x) -> float:
        return self.clients[i].value(self.deploy(i, x))

    def flix_grad_client(self, i: int, x) -> np.ndarray:
        """``alpha_i * grad f_i(T_i(x))``, the message client ``i`` uploads."""
        return self.alpha[i] * self.clients[i].grad(self.deploy(i, x))

    def client_grads(self, x) -> list[np.ndarray]:
        return client_map(lambda i: self.flix_grad_client(i, x), self.n)

    def value(self, x) -> float:
        vals = client_map(lambda i: self.client_value(i, x), self.n)
        try:
            return math.fsum(vals) / self.n
        except OverflowError:
            return math.inf

    def grad(self, x) -> np.ndarray:
        return ordered_mean(self.client_grads(x))


def deploy(p: FlixProblem, i: int, x) -> np.ndarray:
    return p.deploy(i, x)


def flix_value(p: FlixProblem, x) -> float:
    return p.value(x)


def flix_grad(p: FlixProblem, x) -> np.ndarray:
    return p.grad(x)


def flix_grad_client(p: FlixProblem, i: int, x) -> np.ndarray:
    return p.flix_grad_client(i, x)


def aggregate_constants(p: FlixProblem) -> AggregateConstants:
    a2 = p.alpha**2
    return AggregateConstants(
        L_alpha=float(np.mean(a2 * p.L)),
        mu_alpha=float(np.mean(a2 * p.mu)),
        L_hat=float(np.mean(p.L)),
        mu_hat=float(np.mean(p.mu)),
    )


def max_pairwise_sq_distance(xs) -> float:
    xs = np.asarray(xs, dtype=np.float64)
    best = 0.0
    for i in range(len(xs) - 1):
        diff = xs[i + 1 :] - xs[i]
        best = max(best, float(np.max(np.einsum("ij,ij->i", diff, diff))))
    return best


def population_variance(ys) -> float:
    ys = np.asarray(ys, dtype=np.float64)
    centred = ys - ordered_mean(ys)
    return float(np.mean(np.einsum("ij,ij->i", centred, centred)))


def _weighted_average(alpha, L, xs):
    w_raw = alpha**2 * L
    total = float(np.sum(w_raw))
    if total <= 0:
        raise InvalidState("every alpha_i is zero; the averaging weights are undefined")
    w = w_raw / total
    x_avg = ordered_weighted_sum(w, xs)
    diff = xs - x_avg
    V = float(np.sum(w * np.einsum("ij,ij->i", diff, diff)))
    return x_avg, w, V


def one_shot_average(p: FlixProblem) -> HeterogeneityConstants:
    """Weighted average of local models, ``w_i = alpha_i^2 L_i / (n L_alpha)``.

    ``D`` is the maximum pairwise *squared* distance between local models and
    ``V`` the weighted spread of the local models around ``x_avg``.
    """
    x_avg, w, V = _weighted_average(p.alpha, p.L, p.local_models)
    return HeterogeneityConstants(x_avg=x_avg, weights=w, D=max_pairwise_sq_distance(p.local_models), V=V)


def deployed_variance(p: FlixProblem, x) -> float:
    return population_variance(p.deployed_models(x))


@dataclass(frozen=True)
class BudgetSchedule:
    """Communication ladder for equal personalization ``beta``.

    ``beta <= A q^k`` guarantees an ``epsilon`` gap after one averaging
    round plus ``k`` gradient rounds.
    """

    epsilon: float
    A: float
    q: float
    L_hat: float
    mu_hat: float
    V: float
    D: float
    alpha_max_bound: float

    def communications(self, beta: float) -> int:
        if not 0.0 <= beta <= 1.0:
            raise InvalidArgument(f"beta must be in [0, 1], got {beta}")
        if beta == 0.0:
            return 0
        if beta <= self.A:
            return 1
        if math.isinf(self.q):
            return 2
        k = max(1, math.ceil(math.log(beta / self.A) / math.log(self.q)))
        while beta > self.A * self.q**k:
            k += 1
        while k > 1 and beta <= self.A * self.q ** (k - 1):
            k -= 1
        return k + 1

    def gd_rounds(self, beta: float) -> int:
        """Gradient rounds after the averaging round (0 when beta == 0)."""
        return max(self.communications(beta) - 1, 0)

    def rung_upper(self, k: int) -> float:
        """Largest beta served by ``k + 1`` communications."""
        return self.A * self.q**k

    def erm_rounds(self) -> float:
        """``(L/mu) log(L V / (2 eps))`` rounds quoted for beta = 1."""
        return (self.L_hat / self.mu_hat) * math.log(self.L_hat * self.V / (2 * self.epsilon))

    def table(self, max_beta: float = 1.0):
        """Rows ``(beta_lo, beta_hi, communications)`` covering ``[0, max_beta]``."""
        rows = [(0.0, 0.0, 0), (0.0, min(self.A, max_beta), 1)]
        if self.A >= max_beta:
            return rows
        if math.isinf(self.q):
            rows.append((self.A, max_beta, 2))
            return rows
        k = 1
        while True:
            lo, hi = self.rung_upper(k - 1), self.rung_upper(k)
            rows.append((lo, min(hi, max_beta), k + 1))
            if hi >= max_beta:
                return rows
            k += 1


def comm_budget(p: FlixProblem, epsilon: float) -> BudgetSchedule:
    if not epsilon > 0:
        raise InvalidArgument("epsilon must be positive")
    if p.equal_alpha() is None:
        raise InvalidArgument("the communication ladder needs equal alpha_i")
    L_hat = float(np.mean(p.L))
    mu_hat = float(np.mean(p.mu))
    if mu_hat <= 0:
        raise Unsupported("mu_hat = 0: the ladder ratio q is undefined")
    # equal alpha: weights L_i / sum L_j, independent of beta
    _x, _w, V = _weighted_average(np.ones(p.n), p.L, p.local_models)
    D = max_pairwise_sq_distance(p.local_models)
    A = math.sqrt(2 * epsilon / (L_hat * V)) if V > 0 else math.inf
    ratio = 1.0 - mu_hat / L_hat
    q = 1.0 / math.sqrt(ratio) if ratio > 0 else math.inf
    bound = math.sqrt(2 * epsilon) / math.sqrt(L_hat * D) if D > 0 else math.inf
    return BudgetSchedule(epsilon, A, q, L_hat, mu_hat, V, D, bound)
