"""Unbiased compressors: identity and Rand-k sparsification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flixlab.errors import InvalidArgument


@dataclass(frozen=True)
class CompressorSpec:
    kind: str
    d: int
    k: int | None = None

    def __post_init__(self):
        if self.d < 1:
            raise InvalidArgument("dimension must be positive")
        if self.kind == "identity":
            object.__setattr__(self, "k", self.d)
        elif self.kind == "rand_k":
            if self.k is None or not 1 <= self.k <= self.d:
                raise InvalidArgument(f"rand_k needs 1 <= k <= d, got k={self.k}, d={self.d}")
        else:
            raise InvalidArgument(f"unknown compressor {self.kind!r}")

    @classmethod
    def identity(cls, d: int) -> "CompressorSpec":
        return cls("identity", d)

    @classmethod
    def rand_k(cls, d: int, k: int) -> "CompressorSpec":
        return cls("rand_k", d, k)

    @property
    def omega(self) -> float:
        return omega_of(self)

    @property
    def payload(self) -> int:
        """Floats uploaded per message; indices are not counted."""
        return self.k


def omega_of(spec: CompressorSpec) -> float:
    if spec.kind == "identity":
        return 0.0
    return spec.d / spec.k - 1.0


def compress(spec: CompressorSpec, v, rng: np.random.Generator) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (spec.d,):
        raise InvalidArgument(f"expected a vector of dimension {spec.d}, got shape {v.shape}")
    if spec.kind == "identity" or spec.k == spec.d:
        return v
    keep = rng.choice(spec.d, size=spec.k, replace=False)
    out = np.zeros_like(v)
    out[keep] = v[keep] * (spec.d / spec.k)
    return out


def client_rng(seed: int, client: int, round_index: int) -> np.random.Generator:
    """Generator owned by one client for one round."""
    return np.random.default_rng(np.random.SeedSequence([seed, client, round_index]))


def k_sweep(d: int, count: int = 7) -> list[int]:
    """``count`` values rounded (half up) from a linear grid on ``[1, d]``, deduplicated."""
    if count < 2:
        raise InvalidArgument("count must be at least 2")
    if d < 1:
        raise InvalidArgument("d must be positive")
    out = []
    for t in range(count):
        k = int(np.floor(1 + t * (d - 1) / (count - 1) + 0.5))
        if k not in out:
            out.append(k)
    return out
