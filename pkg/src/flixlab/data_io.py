"""LIBSVM parsing, label folding, contiguous partitioning and synthetic problems."""

from __future__ import annotations

import io
import logging
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from flixlab.errors import InvalidArgument, ParseError
from flixlab.objectives import DataBlock, LogisticObjective, QuadraticObjective

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RawDataset:
    """Parsed samples. ``labels`` are already mapped to -1/+1."""

    labels: np.ndarray
    features: sp.csr_matrix

    @property
    def r(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class PartitionSpec:
    n: int
    ranges: tuple[tuple[int, int], ...]

    def sizes(self):
        return tuple(hi - lo for lo, hi in self.ranges)


def binary_labels(raw) -> np.ndarray:
    """Map a two-class label vector onto {-1, +1}.

    The numerically smaller label becomes -1. A single-class vector maps to
    -1 when its label is <= 0 and to +1 otherwise.
    """
    raw = np.asarray(raw, dtype=np.float64)
    classes = np.unique(raw)
    if len(classes) > 2:
        raise InvalidArgument(f"expected at most two classes, found {len(classes)}: {classes[:5]}")
    if len(classes) == 0:
        return raw.copy()
    if len(classes) == 1:
        return np.full(raw.shape, -1.0 if classes[0] <= 0 else 1.0)
    return np.where(raw == classes[0], -1.0, 1.0)


def parse_libsvm(source, d: int | None = None, max_rows: int | None = None) -> RawDataset:
    """Parse ``label idx:val ...`` records.

    ``source`` may be bytes, str or a binary/text file object. Indices are
    1-based and must strictly increase within a line. ``d`` overrides the
    dimension (it must cover every index seen).
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        source = io.StringIO(source)

    labels = []
    indptr = [0]
    indices = []
    values = []
    max_index = 0
    for lineno, line in enumerate(source, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        tokens = line.split()
        if not tokens:
            continue
        if max_rows is not None and len(labels) >= max_rows:
            break
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise ParseError(f"unparsable label {tokens[0]!r}", lineno) from None
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"malformed token {tok!r}", lineno)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"unparsable token {tok!r}", lineno) from None
            if idx <= prev:
                raise ParseError(f"feature index {idx} is not strictly increasing", lineno)
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        max_index = max(max_index, prev)
        indptr.append(len(indices))

    if d is None:
        d = max_index
    elif d < max_index:
        raise ParseError(f"dimension override {d} is smaller than max index {max_index}")
    features = sp.csr_matrix(
        (np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(labels), d),
    )
    return RawDataset(labels=binary_labels(labels), features=features)


def load_libsvm(path, d=None, max_rows=None) -> RawDataset:
    with open(path, "rb") as fh:
        return parse_libsvm(fh, d=d, max_rows=max_rows)


def serialize_libsvm(ds: RawDataset) -> str:
    out = []
    X = ds.features.tocsr()
    X.sort_indices()
    for i in range(ds.r):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        feats = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
        label = "+1" if ds.labels[i] > 0 else "-1"
        out.append(f"{label} {feats}".rstrip())
    return "\n".join(out) + ("\n" if out else "")


def fold_labels(ds: RawDataset) -> sp.csr_matrix:
    """Rows ``y_j * feature_j`` with labels in {-1, +1}."""
    y = binary_labels(ds.labels)
    return sp.csr_matrix(sp.diags(y) @ ds.features)


def partition_contiguous(r: int, n: int) -> PartitionSpec:
    """Machine i (0-based) owns rows ``floor(i*r/n) .. floor((i+1)*r/n)``, half open."""
    if n < 1:
        raise InvalidArgument("need at least one machine")
    if n > r:
        raise InvalidArgument(f"cannot split {r} rows over {n} machines without an empty machine")
    bounds = [(i * r) // n for i in range(n + 1)]
    return PartitionSpec(n=n, ranges=tuple(zip(bounds[:-1], bounds[1:])))


def logistic_clients(ds: RawDataset, n: int, lam: float) -> list[LogisticObjective]:
    if ds.r == 0:
        raise InvalidArgument("dataset is empty")
    rows = fold_labels(ds)
    part = partition_contiguous(ds.r, n)
    return [LogisticObjective(DataBlock(rows[lo:hi]), lam) for lo, hi in part.ranges]


def fetch_dataset(url: str, dest) -> Path:
    """Download ``url`` to ``dest`` unless it already exists. Plain text only."""
    dest = Path(dest)
    if dest.exists():
        return dest
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = dest.with_suffix(dest.suffix + ".part")
    logger.info("fetching %s", url)
    with urllib.request.urlopen(url) as resp, open(tmp, "wb") as fh:
        fh.write(resp.read())
    tmp.replace(dest)
    return dest


def gen_synthetic(
    kind: str,
    n: int,
    d: int,
    per_client: int = 50,
    seed: int = 0,
    *,
    spectrum: tuple[float, float] = (1.0, 10.0),
    spread: float = 1.0,
    mean_shift: float = 1.0,
    lam: float = 0.1,
    feature_scale: float = 1.0,
):
    """Seeded synthetic clients.

    quadratic: ``A_i = Q' diag(s) Q`` with ``s`` log-uniform in ``spectrum`` and
    ``b_i ~ N(0, spread^2 I)``. logistic: rows ``c_i + N(0, I/d)`` where the
    client centre ``c_i ~ N(0, mean_shift^2 I / d)``, all multiplied by
    ``feature_scale``; ``per_client`` rows each. Larger scales raise ``L`` and
    hence the condition number at fixed ``lam``.
    """
    if n < 1 or d < 1:
        raise InvalidArgument("n and d must be positive")
    rng = np.random.default_rng(seed)
    if kind == "quadratic":
        lo, hi = spectrum
        if not 0 < lo <= hi:
            raise InvalidArgument(f"bad spectrum bounds {spectrum}")
        clients = []
        for _ in range(n):
            q, _r = np.linalg.qr(rng.standard_normal((d, d)))
            s = np.exp(rng.uniform(np.log(lo), np.log(hi), size=d))
            A = (q * s) @ q.T
            A = 0.5 * (A + A.T)
            b = spread * rng.standard_normal(d)
            clients.append(QuadraticObjective(A, b))
        return clients
    if kind == "logistic":
        if per_client < 1:
            raise InvalidArgument("per_client must be positive")
        clients = []
        for _ in range(n):
            centre = mean_shift * rng.standard_normal(d) / np.sqrt(d)
            rows = feature_scale * (centre + rng.standard_normal((per_client, d)) / np.sqrt(d))
            clients.append(LogisticObjective(DataBlock(rows), lam))
        return clients
    raise InvalidArgument(f"unknown synthetic kind {kind!r}")
