"""Input robustness measurement and the privacy-to-robustness prediction."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attack import InversionConfig, ReconstructionTask, attack_once
from .errors import ParameterError
from .seeding import derive_rng, digest_arrays
from .verify import BoundCheck


@dataclass(frozen=True)
class RobustnessMeasurement:
    radius: float
    measured: float
    stderr: float
    n_samples: int
    n_probes: int
    level: str


def _quantity(task: ReconstructionTask, x, xp, y, level: str) -> np.ndarray:
    if level == "gradient":
        return np.linalg.norm(task.grad(xp, y) - task.grad(x, y), axis=-1)
    if level == "output":
        return np.abs(task.loss(xp, y) - task.loss(x, y))
    raise ParameterError(f"unknown robustness level {level!r}")


def _sphere(rng, k: int, n: int) -> np.ndarray:
    u = rng.standard_normal((k, n))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def measure_input_robustness(
    task: ReconstructionTask,
    radius: float,
    n_samples: int = 1000,
    n_probes: int = 32,
    level: str = "gradient",
    seed: int = 0,
    ascent_steps: int = 20,
    confine: bool = False,
    sampler=None,
    y=None,
) -> RobustnessMeasurement:
    """Monte Carlo lower bound on ``E_x sup_{||delta|| <= r} q(x, delta)``.

    The inner sup takes the best of ``n_probes`` directions on the sphere
    of radius ``r`` (the two axis directions are always included) and then
    refines it by projected gradient ascent with finite-difference
    gradients. ``confine`` projects ``x + delta`` back into the data domain.
    ``sampler(rng, k)`` draws ``x``; default is uniform over the domain.
    Probes and samples come from seeds independent of ``r``.
    """
    if radius < 0:
        raise ParameterError("radius must be >= 0")
    if n_samples < 1 or n_probes < 1:
        raise ParameterError("budget must be >= 1")
    if radius == 0:
        return RobustnessMeasurement(0.0, 0.0, 0.0, n_samples, n_probes, level)
    n = task.dim
    xs = (sampler or task.sample)(derive_rng(seed, "robust-x"), n_samples)
    dirs = np.vstack([np.eye(n), -np.eye(n), _sphere(derive_rng(seed, "robust-dirs"), n_probes, n)])

    def q(x, delta):
        xp = x + delta
        if confine:
            xp = task.project(xp)
        return _quantity(task, x, xp, y, level)

    vals = q(xs[:, None, :], radius * dirs[None, :, :])
    best_idx = np.argmax(vals, axis=1)
    best = vals[np.arange(n_samples), best_idx]
    delta = radius * dirs[best_idx]

    h = 1e-6 * max(radius, 1e-3)
    step = 0.25 * radius
    for _ in range(ascent_steps):
        base = q(xs, delta)
        grad = np.empty_like(delta)
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            grad[:, j] = (q(xs, delta + e) - base) / h
        cand = delta + step * grad
        norms = np.linalg.norm(cand, axis=1, keepdims=True)
        cand = np.where(norms > radius, cand * radius / np.maximum(norms, 1e-300), cand)
        val = q(xs, cand)
        improve = val > best
        best = np.where(improve, val, best)
        delta = np.where(improve[:, None], cand, delta)
        step *= 0.7
    stderr = float(best.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return RobustnessMeasurement(float(radius), float(best.mean()), stderr, n_samples, len(dirs), level)


def lipschitz_estimate(task: ReconstructionTask, samples: int = 10_000, seed: int = 0) -> float:
    """Largest sampled ``||g(x1) - g(x2)|| / ||x1 - x2||`` over domain pairs.

    Returns exactly 1 for the translation family.
    """
    if task.family == "translation":
        return 1.0
    if samples < 1000:
        raise ParameterError("lipschitz_estimate needs at least 1e3 samples")
    return task.bilipschitz(samples, seed)[1]


@dataclass(frozen=True)
class AlphaPrediction:
    C: float
    r: float
    D: float
    eps_p: float
    c_a: float
    c_b: float
    c_2: float
    I: int
    p: float
    alpha: float
    negative_second_term: bool


def predict_alpha(C, r, D, eps_p, c_a, c_b, c_2, I, p=0.5) -> AlphaPrediction:
    """Robustness level ``C r / 2 + (4 D (1 - eps_p) - c_2 c_b I^{p-1}) / (2 c_a)``."""
    if not c_a > 0:
        raise ParameterError("c_a must be > 0")
    if I < 1:
        raise ParameterError("I must be >= 1")
    second = (4.0 * D * (1.0 - eps_p) - c_2 * c_b * I ** (p - 1.0)) / (2.0 * c_a)
    return AlphaPrediction(C, r, D, eps_p, c_a, c_b, c_2, int(I), p, C * r / 2.0 + second, second < 0)


def verify_privacy_robustness(
    task: ReconstructionTask,
    deltas,
    radii,
    rounds: int = 1000,
    seeds=range(5),
    n_samples: int = 1000,
    n_probes: int = 32,
    p: float = 0.5,
    config: InversionConfig = InversionConfig(),
    confine: bool | None = None,
    measure_seed: int = 0,
) -> list[BoundCheck]:
    """Measured gradient-level robustness against the predicted alpha.

    For each distortion level the leakage ``eps_p`` is the seed-average of
    attacks and ``c_2`` the largest fitted constant across seeds. Translation
    uses tolerance 1e-6; tasks with estimated constants get 5% of ``rhs``.
    ``info`` also records whether each un-halved bound holds on its own.
    """
    exact = task.exact_constants
    confine = (not exact) if confine is None else confine
    C = lipschitz_estimate(task, seed=measure_seed)
    c_a, c_b = task.bilipschitz(seed=measure_seed)
    D = task.diameter
    measured = {float(r): measure_input_robustness(task, float(r), n_samples, n_probes, "gradient",
                                                   measure_seed, confine=confine) for r in radii}
    checks = []
    for delta in deltas:
        runs = [attack_once(task, float(delta), rounds, int(s), config) for s in seeds]
        eps_p = float(np.mean([run.eps_p for run in runs]))
        c_2 = max(run.fit.c2_hat for run in runs)
        for r, meas in measured.items():
            pred = predict_alpha(C, r, D, eps_p, c_a, c_b, c_2, rounds, p)
            distortion_bound = (4.0 * D * (1.0 - eps_p) - c_2 * c_b * rounds ** (p - 1.0)) / c_a
            tol = 1e-6 if exact else 0.05 * abs(pred.alpha)
            checks.append(BoundCheck(
                "privacy_robustness",
                meas.measured,
                pred.alpha,
                tol,
                digest_arrays([delta, r, eps_p, c_2], extra=task.family),
                info={
                    "family": task.family,
                    "delta": float(delta),
                    "r": r,
                    "eps_p": eps_p,
                    "c2": c_2,
                    "C": C,
                    "c_a": c_a,
                    "c_b": c_b,
                    "stderr": meas.stderr,
                    "lipschitz_bound_holds": bool(meas.measured <= C * r + tol),
                    "distortion_bound_holds": bool(meas.measured <= distortion_bound + tol),
                    "negative_second_term": pred.negative_second_term,
                },
            ))
    return checks
