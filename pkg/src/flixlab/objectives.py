"""Client losses: l2-regularized logistic regression and strongly convex quadratics.

Each objective exposes ``value``, ``grad`` and ``constants`` (smoothness ``L``
and strong convexity ``mu``). Logistic rows carry their labels already, i.e.
row ``a_j`` stands for ``y_j * features_j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.special import expit

from flixlab.errors import InvalidArgument, NumericFailure

POWER_RTOL = 1e-9
POWER_MAX_ITER = 10_000


@dataclass(frozen=True)
class ObjectiveConstants:
    L: float
    mu: float

    def __post_init__(self):
        if not (0.0 <= self.mu <= self.L * (1 + 1e-12) + 1e-300):
            raise InvalidArgument(f"need 0 <= mu <= L, got mu={self.mu}, L={self.L}")


@dataclass(frozen=True, eq=False)
class DataBlock:
    """Signed feature rows of one client, dense ``ndarray`` or CSR matrix."""

    rows: np.ndarray | sp.csr_matrix

    def __post_init__(self):
        rows = self.rows
        if sp.issparse(rows):
            rows = sp.csr_matrix(rows, dtype=np.float64)
            finite = np.all(np.isfinite(rows.data))
        else:
            rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
            finite = np.all(np.isfinite(rows))
        if rows.shape[0] < 1:
            raise InvalidArgument("a data block needs at least one row")
        if not finite:
            raise InvalidArgument("data rows must be finite")
        object.__setattr__(self, "rows", rows)

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


def _check_dim(x, d):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d,):
        raise InvalidArgument(f"expected a vector of dimension {d}, got shape {x.shape}")
    return x


def _softplus_neg(t):
    # log(1 + exp(-t)), branch-wise stable
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = np.log1p(np.exp(-t[pos]))
    neg = ~pos
    out[neg] = -t[neg] + np.log1p(np.exp(t[neg]))
    return out


def gram_lambda_max(rows, rtol=POWER_RTOL, max_iter=POWER_MAX_ITER) -> float:
    """Largest eigenvalue of ``rows.T @ rows`` by power iteration.

    The Gram operator is applied as ``v -> rows.T @ (rows @ v)`` so sparse
    inputs never materialize a d x d matrix. The start vector is the
    normalized all-ones vector.
    """
    d = rows.shape[1]
    v = np.full(d, 1.0 / np.sqrt(d))
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = rows.T @ (rows @ v)
        w = np.asarray(w).ravel()
        lam_new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return lam_new
        lam = lam_new
    raise NumericFailure(
        f"power iteration did not reach rtol={rtol} in {max_iter} iterations", iterations=max_iter
    )


@dataclass(frozen=True, eq=False)
class LogisticObjective:
    """``f(x) = mean_j log(1 + exp(-a_j.x)) + lam/2 |x|^2``."""

    data: DataBlock
    lam: float = 0.0

    def __post_init__(self):
        if not isinstance(self.data, DataBlock):
            object.__setattr__(self, "data", DataBlock(self.data))
        if not self.lam >= 0:
            raise InvalidArgument(f"regularization must be >= 0, got {self.lam}")

    @property
    def dim(self) -> int:
        return self.data.d

    def value(self, x) -> float:
        return logistic_value(self, x)

    def grad(self, x) -> np.ndarray:
        return logistic_grad(self, x)

    @cached_property
    def constants(self) -> ObjectiveConstants:
        return logistic_constants(self)


def logistic_value(obj: LogisticObjective, x) -> float:
    x = _check_dim(x, obj.dim)
    t = np.asarray(obj.data.rows @ x).ravel()
    return float(np.mean(_softplus_neg(t)) + 0.5 * obj.lam * (x @ x))


def logistic_grad(obj: LogisticObjective, x) -> np.ndarray:
    x = _check_dim(x, obj.dim)
    rows = obj.data.rows
    t = np.asarray(rows @ x).ravel()
    s = expit(-t)
    g = -np.asarray(rows.T @ s).ravel() / obj.data.k
    return g + obj.lam * x


def logistic_constants(obj: LogisticObjective) -> ObjectiveConstants:
    lam_max = gram_lambda_max(obj.data.rows)
    return ObjectiveConstants(L=lam_max / (4.0 * obj.data.k) + obj.lam, mu=float(obj.lam))


@dataclass(frozen=True, eq=False)
class QuadraticObjective:
    """``f(x) = 1/2 x'Ax - b'x + c`` with symmetric positive definite ``A``."""

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        d = A.shape[0]
        if A.shape != (d, d) or b.shape != (d,):
            raise InvalidArgument(f"incompatible shapes A{A.shape}, b{b.shape}")
        scale = max(np.max(np.abs(A)), 1e-300)
        if np.max(np.abs(A - A.T)) > 1e-12 * scale:
            raise InvalidArgument("A must be symmetric")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))
        if self._eigenvalues[0] <= 0:
            raise InvalidArgument("A must be positive definite")

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    @cached_property
    def _eigenvalues(self):
        return np.linalg.eigvalsh(self.A)

    @cached_property
    def _cho(self):
        try:
            return scipy.linalg.cho_factor(self.A)
        except np.linalg.LinAlgError as exc:
            raise InvalidArgument(f"A is not positive definite: {exc}") from exc

    def value(self, x) -> float:
        x = _check_dim(x, self.dim)
        return float(0.5 * x @ (self.A @ x) - self.b @ x + self.c)

    def grad(self, x) -> np.ndarray:
        x = _check_dim(x, self.dim)
        return self.A @ x - self.b

    @cached_property
    def minimizer(self) -> np.ndarray:
        return scipy.linalg.cho_solve(self._cho, self.b)

    @cached_property
    def constants(self) -> ObjectiveConstants:
        ev = self._eigenvalues
        return ObjectiveConstants(L=float(ev[-1]), mu=float(ev[0]))


def quadratic_value_grad_min(obj: QuadraticObjective, x):
    """Return ``(f(x), grad f(x), argmin f)``; constants are on ``obj.constants``."""
    return obj.value(x), obj.grad(x), obj.minimizer.copy()
