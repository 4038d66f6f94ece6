"""Flat ``section.key = value`` experiment configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from flixlab.errors import InvalidArgument

ALGORITHMS = ("dgd", "dcgd", "diana")
DEFAULT_K = {"dgd": 2000, "dcgd": 10000, "diana": 10000}


class ConfigError(InvalidArgument):
    pass


def _items(text):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError("empty list")
    return items


def _float_list(text):
    return [float(t) for t in _items(text)]


def _int_list(text):
    return [int(t) for t in _items(text)]


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _stepsize(text):
    text = text.strip()
    if text == "theoretical":
        return text
    v = float(text)
    if not v > 0:
        raise ValueError("stepsize must be positive")
    return v


KEYS = {
    "problem.source": str,  # libsvm | synthetic
    "problem.path": str,
    "problem.lam": float,
    "problem.n": int,
    "problem.max_rows": int,
    "problem.d": int,
    "synthetic.kind": str,  # quadratic | logistic
    "synthetic.d": int,
    "synthetic.per_client": int,
    "synthetic.seed": int,
    "synthetic.spectrum_min": float,
    "synthetic.spectrum_max": float,
    "synthetic.spread": float,
    "synthetic.mean_shift": float,
    "alpha.beta": float,
    "alpha.grid": _float_list,
    "alpha.values": _float_list,
    "run.algorithm": str,
    "run.stepsize": _stepsize,
    "run.K": int,
    "run.seed": int,
    "compressor.kind": str,  # identity | rand_k
    "compressor.k": _int_list,
    "compressor.sweep": _bool,
    "compressor.sweep_count": int,
    "local.tol": float,
    "local.max_iter": int,
    "reference.tol": float,
    "budget.epsilon": float,
    "budget.confirm": _bool,
    "verify.stepsize_scale": float,
    "verify.full": _bool,
    "output.dir": str,
}


@dataclass
class RunConfig:
    source: str = "synthetic"
    path: str | None = None
    lam: float = 0.1
    n: int = 10
    max_rows: int | None = None
    d: int | None = None
    synthetic_kind: str = "logistic"
    synthetic_d: int = 50
    per_client: int = 50
    synthetic_seed: int | None = None
    spectrum: tuple = (1.0, 10.0)
    spread: float = 1.0
    mean_shift: float = 1.0
    alpha_grid: list = field(default_factory=lambda: [0.5])
    alpha_values: list | None = None
    algorithm: str = "dgd"
    stepsize: object = "theoretical"
    K: int | None = None
    seed: int | None = None
    compressor: str = "identity"
    k_values: list | None = None
    k_sweep: bool = False
    sweep_count: int = 7
    local_tol: float = 1e-6
    local_max_iter: int = 1_000_000
    reference_tol: float = 1e-12
    epsilon: float | None = None
    confirm: bool = False
    verify_stepsize_scale: float = 1.0
    verify_full: bool = False
    out_dir: str | None = None
    base_dir: str = "."

    @property
    def rounds(self) -> int:
        return DEFAULT_K[self.algorithm] if self.K is None else self.K

    @property
    def problem_seed(self) -> int:
        return self.seed if self.synthetic_seed is None else self.synthetic_seed

    def resolved_path(self) -> Path:
        p = Path(self.path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def problem_fingerprint(self) -> str:
        """Hash of everything that determines the clients and their local models."""
        keys = ["source", "lam", "n", "max_rows", "d", "local_tol", "local_max_iter"]
        if self.source == "synthetic":
            keys += ["synthetic_kind", "synthetic_d", "per_client", "spectrum", "spread", "mean_shift"]
        blob = {k: getattr(self, k) for k in keys}
        if self.source == "synthetic":
            blob["problem_seed"] = self.problem_seed
        else:
            blob["path"] = str(self.resolved_path())
        return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()

    def to_dict(self):
        d = asdict(self)
        d["spectrum"] = list(self.spectrum)
        return d


def parse_config(text: str, base_dir=".") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return values


def build_config(values: dict, base_dir=".", seed_override: int | None = None,
                 out_override: str | None = None) -> RunConfig:
    c = RunConfig(base_dir=str(base_dir))
    simple = {
        "problem.source": "source", "problem.path": "path", "problem.lam": "lam", "problem.n": "n",
        "problem.max_rows": "max_rows", "problem.d": "d", "synthetic.kind": "synthetic_kind",
        "synthetic.d": "synthetic_d", "synthetic.per_client": "per_client", "synthetic.seed": "synthetic_seed",
        "synthetic.spread": "spread", "synthetic.mean_shift": "mean_shift", "run.algorithm": "algorithm",
        "run.stepsize": "stepsize", "run.K": "K", "run.seed": "seed", "compressor.kind": "compressor",
        "compressor.k": "k_values", "compressor.sweep": "k_sweep", "compressor.sweep_count": "sweep_count",
        "local.tol": "local_tol", "local.max_iter": "local_max_iter", "reference.tol": "reference_tol",
        "budget.epsilon": "epsilon", "budget.confirm": "confirm", "output.dir": "out_dir",
        "alpha.values": "alpha_values", "verify.stepsize_scale": "verify_stepsize_scale",
        "verify.full": "verify_full",
    }
    for key, attr in simple.items():
        if key in values:
            setattr(c, attr, values[key])
    lo = values.get("synthetic.spectrum_min", c.spectrum[0])
    hi = values.get("synthetic.spectrum_max", c.spectrum[1])
    c.spectrum = (lo, hi)
    alpha_keys = [k for k in ("alpha.beta", "alpha.grid", "alpha.values") if k in values]
    if len(alpha_keys) > 1:
        raise ConfigError(f"choose one alpha policy, got {', '.join(alpha_keys)}")
    if "alpha.beta" in values:
        c.alpha_grid = [values["alpha.beta"]]
    elif "alpha.grid" in values:
        c.alpha_grid = values["alpha.grid"]
    if seed_override is not None:
        c.seed = seed_override
    if out_override is not None:
        c.out_dir = out_override
    validate(c)
    return c


def validate(c: RunConfig):
    if c.seed is None:
        raise ConfigError("run.seed is required (or pass --seed)")
    if c.source not in ("synthetic", "libsvm"):
        raise ConfigError(f"problem.source must be synthetic or libsvm, got {c.source!r}")
    if c.source == "libsvm":
        if not c.path:
            raise ConfigError("problem.path is required for libsvm sources")
        if not c.resolved_path().is_file():
            raise ConfigError(f"data file not found: {c.resolved_path()}")
    elif c.synthetic_kind not in ("quadratic", "logistic"):
        raise ConfigError(f"synthetic.kind must be quadratic or logistic, got {c.synthetic_kind!r}")
    if not c.lam >= 0:
        raise ConfigError("problem.lam must be >= 0")
    if c.n < 1:
        raise ConfigError("problem.n must be >= 1")
    if c.algorithm not in ALGORITHMS:
        raise ConfigError(f"run.algorithm must be one of {ALGORITHMS}")
    if c.K is not None and c.K < 0:
        raise ConfigError("run.K must be >= 0")
    if c.compressor not in ("identity", "rand_k"):
        raise ConfigError("compressor.kind must be identity or rand_k")
    if c.compressor == "rand_k" and not c.k_sweep and not c.k_values:
        raise ConfigError("rand_k needs compressor.k or compressor.sweep = true")
    if c.sweep_count < 1:
        raise ConfigError("compressor.sweep_count must be >= 1")
    grid = c.alpha_values if c.alpha_values is not None else c.alpha_grid
    if not grid:
        raise ConfigError("alpha grid is empty")
    if any(not 0.0 <= a <= 1.0 for a in grid):
        raise ConfigError("alpha values must lie in [0, 1]")
    if c.alpha_values is not None and len(c.alpha_values) != c.n:
        raise ConfigError(f"alpha.values needs {c.n} entries, got {len(c.alpha_values)}")
    if c.epsilon is not None and not c.epsilon > 0:
        raise ConfigError("budget.epsilon must be positive")


def load_config(path, seed_override=None, out_override=None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config {path} is not UTF-8") from exc
    return build_config(parse_config(text), path.parent, seed_override, out_override)
