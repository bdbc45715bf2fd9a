"""Finite privacy mechanisms (stochastic kernels) and gradient perturbations.

A :class:`StochasticKernel` holds ``K[d][w] = P(W = w | D = d)`` for integer
labels ``0..n-1`` (string aliases optional). Constructors validate
row-stochasticity; instances are immutable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import KernelFormatError, ParameterError
from .seeding import digest_arrays

ROW_SUM_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _labels(labels, n: int, what: str) -> tuple:
    if labels is None:
        return tuple(range(n))
    labels = tuple(labels)
    if len(labels) != n:
        raise ParameterError(f"{what}: expected {n} labels, got {len(labels)}")
    if len(set(labels)) != n:
        raise ParameterError(f"{what}: labels must be unique")
    return labels


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability vector over a finite support."""

    mass: np.ndarray
    support: tuple = None

    def __post_init__(self):
        mass = _frozen(self.mass)
        if mass.ndim != 1 or mass.size == 0:
            raise ParameterError("distribution mass must be a non-empty vector")
        if not np.all(np.isfinite(mass)) or np.any(mass < 0) or np.any(mass > 1):
            raise ParameterError("distribution entries must lie in [0, 1]")
        if abs(mass.sum() - 1.0) > ROW_SUM_TOL:
            raise ParameterError(f"distribution sums to {mass.sum()!r}, not 1")
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "support", _labels(self.support, mass.size, "support"))

    def __len__(self):
        return self.mass.size

    @classmethod
    def uniform(cls, n: int) -> "DiscreteDistribution":
        return cls(np.full(n, 1.0 / n))

    def digest(self) -> str:
        return digest_arrays(self.mass)


def as_mass(p) -> np.ndarray:
    """Accept a DiscreteDistribution or any array-like and return the vector."""
    if isinstance(p, DiscreteDistribution):
        return p.mass
    return np.asarray(p, dtype=np.float64)


@dataclass(frozen=True)
class StochasticKernel:
    """Row-stochastic matrix ``rows[d, w] = P(W=w | D=d)``."""

    rows: np.ndarray
    input_labels: tuple = None
    output_labels: tuple = None

    def __post_init__(self):
        rows = _frozen(self.rows)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ParameterError("kernel needs at least one input and one output")
        if not np.all(np.isfinite(rows)) or np.any(rows < 0) or np.any(rows > 1):
            raise ParameterError("kernel entries must lie in [0, 1]")
        bad = np.flatnonzero(np.abs(rows.sum(axis=1) - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise ParameterError(f"row {bad[0]} sums to {rows[bad[0]].sum()!r}, not 1")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "input_labels", _labels(self.input_labels, rows.shape[0], "inputs"))
        object.__setattr__(self, "output_labels", _labels(self.output_labels, rows.shape[1], "outputs"))

    @property
    def n_inputs(self) -> int:
        return self.rows.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.rows.shape[1]

    def input_index(self, d) -> int:
        return _index(d, self.input_labels, "input")

    def output_index(self, w) -> int:
        return _index(w, self.output_labels, "output")

    def digest(self) -> str:
        return digest_arrays(self.rows)

    def to_json(self) -> str:
        return json.dumps(
            {"inputs": self.n_inputs, "outputs": self.n_outputs, "rows": self.rows.tolist()}
        )


def _index(label, labels: tuple, what: str) -> int:
    if label in labels:
        return labels.index(label)
    if isinstance(label, (int, np.integer)) and 0 <= label < len(labels):
        return int(label)
    raise ParameterError(f"unknown {what} label {label!r}")


@dataclass(frozen=True)
class GradientPerturbation:
    """Additive distortion of norm ``magnitude`` applied to a released gradient.

    ``fixed`` mode uses ``direction`` (default: first basis vector);
    ``isotropic`` mode draws a uniform direction on the sphere from ``seed``.
    """

    mode: str = "fixed"
    magnitude: float = 0.0
    seed: int | None = None
    direction: tuple | None = field(default=None)

    def __post_init__(self):
        if self.mode not in ("fixed", "isotropic"):
            raise ParameterError(f"unknown perturbation mode {self.mode!r}")
        if not self.magnitude >= 0:
            raise ParameterError("perturbation magnitude must be >= 0")
        if self.mode == "isotropic" and self.seed is None:
            raise ParameterError("isotropic perturbation requires a seed")

    def vector(self, dim: int) -> np.ndarray:
        if self.mode == "fixed":
            u = np.zeros(dim) if self.direction is None else np.asarray(self.direction, float)
            if self.direction is None:
                u[0] = 1.0
        else:
            u = np.random.default_rng(self.seed).standard_normal(dim)
        norm = np.linalg.norm(u)
        if u.shape != (dim,) or norm == 0:
            raise ParameterError("perturbation direction must be a non-zero vector of matching size")
        return self.magnitude * (u / norm)


# ---------------------------------------------------------------- constructors


def make_randomized_response(k: int, flip_prob: float) -> StochasticKernel:
    """k-ary randomized response: keep with ``1-p``, else uniform over the rest."""
    if k < 2:
        raise ParameterError("randomized response needs k >= 2")
    if not 0.0 <= flip_prob <= (k - 1) / k:
        raise ParameterError(f"flip_prob must lie in [0, {(k - 1) / k}] for k={k}")
    rows = np.full((k, k), flip_prob / (k - 1))
    np.fill_diagonal(rows, 1.0 - flip_prob)
    return StochasticKernel(rows)


def make_constant_mechanism(n: int, target: int = 0, n_outputs: int | None = None) -> StochasticKernel:
    n_outputs = max(n, target + 1) if n_outputs is None else n_outputs
    if not 0 <= target < n_outputs:
        raise ParameterError(f"target {target} is not a valid output label")
    rows = np.zeros((n, n_outputs))
    rows[:, target] = 1.0
    return StochasticKernel(rows)


def make_identity(n: int) -> StochasticKernel:
    return StochasticKernel(np.eye(n))


def random_kernel(seed: int, n_in: int, n_out: int, min_prob: float = 0.0) -> StochasticKernel:
    """Random kernel with every entry >= ``min_prob``.

    Each row is ``min_prob + (1 - n_out*min_prob) * Dirichlet(1)``.
    """
    if min_prob < 0 or min_prob * n_out > 1:
        raise ParameterError(f"min_prob={min_prob} infeasible for {n_out} outputs")
    rng = np.random.default_rng(seed)
    rows = min_prob + (1.0 - n_out * min_prob) * rng.dirichlet(np.ones(n_out), size=n_in)
    return StochasticKernel(rows)


def sample_output(kernel: StochasticKernel, d, rng: np.random.Generator, size: int | None = None):
    """Draw ``W ~ K[d]`` using the caller's generator (inverse-CDF on one uniform)."""
    row = kernel.rows[kernel.input_index(d)]
    cdf = np.cumsum(row)
    u = rng.random(size)
    idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), kernel.n_outputs - 1)
    if size is None:
        return kernel.output_labels[int(idx)]
    return idx


# ---------------------------------------------------------------- file format


def load_kernel(source: str) -> StochasticKernel:
    """Parse the JSON kernel format ``{"inputs": n, "outputs": m, "rows": [[...], ...]}``.

    ``source`` is either JSON text or a path to a file containing it.
    Diagnostics carry the line number of the offending row.
    """
    text = source
    if not source.lstrip().startswith("{"):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise KernelFormatError(exc.msg, exc.lineno) from None
    if not isinstance(obj, dict):
        raise KernelFormatError("top-level value must be an object", 1)
    for key in ("inputs", "outputs", "rows"):
        if key not in obj:
            raise KernelFormatError(f"missing key {key!r}", 1)
    n, m, rows = obj["inputs"], obj["outputs"], obj["rows"]
    row_lines = _row_lines(text)
    if not isinstance(n, int) or not isinstance(m, int) or n < 1 or m < 1:
        raise KernelFormatError("'inputs' and 'outputs' must be positive integers", _key_line(text, "inputs"))
    if not isinstance(rows, list) or len(rows) != n:
        raise KernelFormatError(f"expected {n} rows", _key_line(text, "rows"))
    for i, row in enumerate(rows):
        line = row_lines[i] if i < len(row_lines) else None
        if not isinstance(row, list) or len(row) != m:
            raise KernelFormatError(f"row {i} must have {m} entries", line)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
            raise KernelFormatError(f"row {i} has non-numeric entries", line)
        arr = np.asarray(row, dtype=np.float64)
        if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
            raise KernelFormatError(f"row {i} has entries outside [0, 1]", line)
        if abs(arr.sum() - 1.0) > ROW_SUM_TOL:
            raise KernelFormatError(f"row {i} sums to {arr.sum()!r}, not 1", line)
    return StochasticKernel(np.asarray(rows, dtype=np.float64))


def _key_line(text: str, key: str) -> int | None:
    pos = text.find(f'"{key}"')
    return None if pos < 0 else text.count("\n", 0, pos) + 1


def _row_lines(text: str) -> list[int]:
    """Line numbers where each element of the ``rows`` array starts."""
    pos = text.find('"rows"')
    if pos < 0:
        return []
    pos = text.find("[", pos)
    if pos < 0:
        return []
    dec = json.JSONDecoder()
    lines, i = [], pos + 1
    while i < len(text):
        while i < len(text) and text[i] in " \t\r\n,":
            i += 1
        if i >= len(text) or text[i] == "]":
            break
        lines.append(text.count("\n", 0, i) + 1)
        try:
            _, i = dec.raw_decode(text, i)
        except json.JSONDecodeError:
            break
    return lines


def kernel_from_config(spec: dict) -> StochasticKernel:
    """Build a kernel from a config sub-object (used by the CLI)."""
    kind = spec.get("type", "rr")
    if kind == "rr":
        return make_randomized_response(int(spec["k"]), float(spec["flip_prob"]))
    if kind == "constant":
        return make_constant_mechanism(int(spec["n"]), int(spec.get("target", 0)))
    if kind == "identity":
        return make_identity(int(spec["n"]))
    if kind == "random":
        return random_kernel(int(spec["seed"]), int(spec["n_in"]), int(spec["n_out"]), float(spec.get("min_prob", 0.0)))
    if kind == "file":
        return load_kernel(spec["path"])
    if kind == "rows":
        return StochasticKernel(np.asarray(spec["rows"], dtype=np.float64))
    raise ParameterError(f"unknown kernel type {kind!r}")

