"""Numerical checks of the privacy theorems by enumeration and Monte Carlo.

Every check returns :class:`BoundCheck` objects (``lhs <= rhs + tol``).
Checks whose preconditions are not met are still reported but carry
``asserted=False`` so suites never silently drop them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import metrics
from .errors import ParameterError
from .mechanism import StochasticKernel, random_kernel
from .seeding import derive_rng, derive_seed, digest_arrays


@dataclass
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    tol: float = 1e-12
    instance_digest: str = ""
    asserted: bool = True
    note: str = ""
    info: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        if math.isinf(self.rhs) and math.isinf(self.lhs) and self.rhs == self.lhs:
            return 0.0
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        if math.isnan(self.lhs) or math.isnan(self.rhs):
            return False
        return self.slack >= -self.tol

    @property
    def failed(self) -> bool:
        """An asserted check that does not hold."""
        return self.asserted and not self.holds

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": _num(self.lhs),
            "rhs": _num(self.rhs),
            "slack": _num(self.slack),
            "tol": _num(self.tol),
            "holds": self.holds,
            "asserted": self.asserted,
            "instance_digest": self.instance_digest,
            "note": self.note,
            "info": {k: _num(v) for k, v in sorted(self.info.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _num(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def summarize(checks: list[BoundCheck]) -> dict:
    asserted = [c for c in checks if c.asserted]
    slacks = [c.slack for c in asserted]
    return {
        "instances": len(checks),
        "asserted": len(asserted),
        "passed": sum(c.holds for c in asserted),
        "failed": sum(not c.holds for c in asserted),
        "worst_slack": min(slacks) if slacks else math.nan,
    }


# ---------------------------------------------------------------- instance generators


def random_prior(rng: np.random.Generator, n: int, floor: float = 1e-3) -> np.ndarray:
    """Strictly positive prior: Dirichlet(1) mixed with a small uniform floor."""
    p = (1.0 - floor) * rng.dirichlet(np.ones(n)) + floor / n
    return p / p.sum()


def tilted_prior(rng: np.random.Generator, prior: np.ndarray, eps: float) -> np.ndarray:
    """Random prior ``b`` with ``|ln(b/prior)| <= eps`` everywhere.

    Exponents are drawn from ``U[-1/2, 1/2]``; after normalization the log
    ratio lies in ``eps * [min u - max u, max u - min u]`` which is within
    ``[-eps, eps]``.
    """
    u = rng.uniform(-0.5, 0.5, size=prior.size)
    b = prior * np.exp(eps * u)
    return b / b.sum()


def random_kernel_instance(master_seed: int, index: int, sizes=(2, 8), min_prob: float = 1e-3) -> StochasticKernel:
    rng = derive_rng(master_seed, "kernel-shape", index)
    n_in, n_out = rng.integers(sizes[0], sizes[1] + 1, size=2)
    return random_kernel(derive_seed(master_seed, "kernel", index), int(n_in), int(n_out), min_prob)


# ---------------------------------------------------------------- LDP <-> MBP


def verify_ldp_mbp(kernel: StochasticKernel, priors, tol: float = 1e-9) -> list[BoundCheck]:
    """(a) ``mbp_xi(K, prior) <= ldp_epsilon(K)`` per prior; (b) ``ldp <= 2 * xi_sup``."""
    priors = np.atleast_2d(np.asarray(priors, float))
    eps = metrics.ldp_epsilon(kernel)
    xis = metrics.mbp_xi_batch(kernel, priors)
    kd = kernel.digest()
    checks = [
        BoundCheck("ldp_mbp.a", float(x), eps, tol, digest_arrays(kernel.rows, p))
        for x, p in zip(xis, priors)
    ]
    checks.append(BoundCheck("ldp_mbp.b", eps, 2.0 * metrics.mbp_xi_sup(kernel), tol, kd))
    return checks


# ---------------------------------------------------------------- MBP -> ABP


def mbp_abp_bound(xi: float, eps: float) -> float:
    t = xi + eps
    return math.sqrt(t * math.expm1(t)) / math.sqrt(2.0)


def verify_mbp_abp(kernel: StochasticKernel, true_prior, attacker_prior, tol: float = 1e-9) -> BoundCheck:
    xi = metrics.mbp_xi(kernel, true_prior)
    eps = metrics.prior_mismatch_eps(true_prior, attacker_prior)
    lhs = metrics.abp_epsilon(kernel, true_prior, attacker_prior)
    return BoundCheck(
        "mbp_abp",
        lhs,
        mbp_abp_bound(xi, eps),
        tol,
        digest_arrays(kernel.rows, metrics.as_mass(true_prior), metrics.as_mass(attacker_prior)),
        info={"xi": xi, "eps": eps},
    )


# ---------------------------------------------------------------- PAC robustness


@dataclass(frozen=True)
class PacMechanism:
    """Finite mechanism plus a per-output estimate ``e(w)`` of a target ``mu``."""

    kernel: StochasticKernel
    estimate_map: np.ndarray
    target: np.ndarray
    alpha: float
    beta: float | None = None

    def __post_init__(self):
        est = np.atleast_2d(np.asarray(self.estimate_map, float))
        if est.shape[0] == 1 and self.kernel.n_outputs > 1:
            est = est.T
        if est.shape[0] != self.kernel.n_outputs:
            raise ParameterError("estimate_map needs one vector per output")
        object.__setattr__(self, "estimate_map", est)
        object.__setattr__(self, "target", np.atleast_1d(np.asarray(self.target, float)))
        if not self.alpha >= 0:
            raise ParameterError("alpha must be >= 0")
        if self.beta is not None and not 0 < self.beta < 1:
            raise ParameterError("beta must lie in (0, 1)")

    def failure_mask(self) -> np.ndarray:
        return np.linalg.norm(self.estimate_map - self.target, axis=1) > self.alpha

    def failure_probs(self) -> np.ndarray:
        """``Pr[||e(W) - mu|| > alpha | d]`` for every input, by enumeration."""
        return self.kernel.rows @ self.failure_mask().astype(float)

    def digest(self) -> str:
        return digest_arrays(self.kernel.rows, self.estimate_map, self.target, [self.alpha])


def verify_pac_robustness(pm: PacMechanism, tol: float = 1e-12) -> BoundCheck:
    """Worst alternative-input failure vs ``(1 + 4 xi) * beta*``.

    ``beta*`` is the largest failure probability over inputs and ``xi`` the
    all-priors MBP level. Asserted only when ``xi <= 1``.
    """
    xi = metrics.mbp_xi_sup(pm.kernel)
    probs = pm.failure_probs()
    beta_star = float(probs.max())
    lhs = float(probs.max())
    rhs = (1.0 + 4.0 * xi) * beta_star
    note = ""
    if beta_star == 0.0:
        note = "vacuous: empty failure set"
    if not xi <= 1.0:
        note = "reported only: xi_sup > 1"
    return BoundCheck(
        "pac_robustness",
        lhs,
        rhs,
        tol,
        pm.digest(),
        asserted=xi <= 1.0,
        note=note,
        info={"xi_sup": xi, "beta_star": beta_star, "exp2xi_chain": math.exp(2.0 * xi) * beta_star},
    )


def verify_pac_robustness_per_reference(pm: PacMechanism, tol: float = 1e-12) -> BoundCheck:
    """Sharper form: every reference input ``d`` bounds every alternative ``d'``.

    ``lhs = max_{d,d'} (Pr[fail|d'] - (1+4 xi) Pr[fail|d])`` against ``rhs = 0``.
    Also records the largest ``Pr[fail|d'] / Pr[fail|d]`` ratio next to the
    intermediate ``e^{2 xi}`` and ``e^{xi}`` factors.
    """
    xi = metrics.mbp_xi_sup(pm.kernel)
    probs = pm.failure_probs()
    gaps = probs[None, :] - (1.0 + 4.0 * xi) * probs[:, None]
    pos = probs > 0
    ratio = float(probs.max() / probs[pos].min()) if pos.any() else 1.0
    return BoundCheck(
        "pac_robustness.per_reference",
        float(gaps.max()),
        0.0,
        tol,
        pm.digest(),
        asserted=xi <= 1.0,
        note="" if xi <= 1.0 else "reported only: xi_sup > 1",
        info={
            "xi_sup": xi,
            "max_ratio": ratio,
            "exp_xi": math.exp(xi),
            "exp_2xi": math.exp(2.0 * xi),
            "one_plus_4xi": 1.0 + 4.0 * xi,
        },
    )


def random_pac_mechanism(master_seed: int, index: int, xi_cap: float = 1.0) -> PacMechanism:
    """Random instance with ``xi_sup <= xi_cap``.

    Rows are ``exp(s * U)`` normalized with ``s = target/2``; column ratios
    are then bounded by ``e^{target}``. ``alpha`` sits between two distinct
    estimate distances so the failure set is a proper non-empty subset.
    """
    rng = derive_rng(master_seed, "pac", index)
    n_in, n_out = (int(v) for v in rng.integers(2, 9, size=2))
    target_xi = rng.uniform(0.0, xi_cap)
    rows = np.exp(0.5 * target_xi * rng.random((n_in, n_out)))
    rows /= rows.sum(axis=1, keepdims=True)
    dim = int(rng.integers(1, 4))
    est = rng.normal(size=(n_out, dim))
    mu = rng.normal(size=dim) * 0.5
    dist = np.sort(np.linalg.norm(est - mu, axis=1))
    cut = int(rng.integers(0, n_out - 1))
    alpha = 0.5 * (dist[cut] + dist[cut + 1])
    return PacMechanism(StochasticKernel(rows), est, mu, float(alpha))


# ---------------------------------------------------------------- kappa_1 concentration


def chernoff_bound(kappa1: float, T: int, eps: float) -> float:
    return 2.0 * math.exp(-eps * eps * T * kappa1 / 3.0)


def _deviates(counts, kappa1: float, T: int, eps: float):
    return np.abs(np.asarray(counts, float) - T * kappa1) > eps * T * kappa1


def exact_deviation_prob(kappa1: float, T: int, eps: float) -> float:
    """``Pr[|X/T - kappa1| > eps*kappa1]`` for ``X ~ Binomial(T, kappa1)``."""
    k = np.arange(T + 1)
    pmf = stats.binom.pmf(k, T, kappa1)
    return float(pmf[_deviates(k, kappa1, T, eps)].sum())


def verify_kappa1_concentration(kappa1: float, T: int, eps: float, trials: int = 100_000, seed: int = 0) -> BoundCheck:
    """Monte Carlo frequency of a relative deviation vs the multiplicative Chernoff bound.

    ``rhs`` adds three binomial standard errors of the Monte Carlo frequency.
    A failing first pass is rerun once with ten times the trials.
    """
    if trials < 10_000:
        raise ParameterError("kappa1 concentration needs at least 1e4 trials")
    if not 0 < kappa1 < 1:
        raise ParameterError("kappa1 must lie in (0, 1)")
    bound = chernoff_bound(kappa1, T, eps)
    b = min(bound, 1.0)
    attempts = 0
    for n in (trials, 10 * trials):
        attempts += 1
        rng = derive_rng(seed, "kappa1", kappa1, T, eps, n)
        counts = rng.binomial(T, kappa1, size=n)
        freq = float(_deviates(counts, kappa1, T, eps).mean())
        sigma = math.sqrt(b * (1.0 - b) / n)
        rhs = bound + 3.0 * sigma
        if freq <= rhs:
            break
    return BoundCheck(
        "kappa1_concentration",
        freq,
        rhs,
        0.0,
        digest_arrays([kappa1, T, eps, trials], extra=str(seed)),
        note="vacuous: bound >= 1" if bound >= 1 else "",
        info={
            "bound": bound,
            "sigma": sigma,
            "trials": n,
            "attempts": attempts,
            "exact_prob": exact_deviation_prob(kappa1, T, eps),
        },
    )


# ---------------------------------------------------------------- C1 estimation error


def c1_error_bound(eps: float) -> float:
    """Worst-case ``|C1_hat - C1|`` given a relative error ``eps`` on kappa_1."""
    if eps == 0:
        return 0.0
    a = (1.0 + eps) * math.log((1.0 + eps) / (1.0 - eps)) / 2.0
    b = (eps + max(math.log1p(eps), -math.log1p(-eps))) / 2.0
    return math.sqrt(a + b)


def c1_hat_range(kappa1: np.ndarray, kappa2: np.ndarray, eps: float) -> tuple[float, float]:
    """Exact min and max of ``C1_hat`` over the box ``kappa1 * [1-eps, 1+eps]``.

    ``C1_hat^2`` is a separable sum of functions each convex in its own
    coordinate, so the max picks the worse endpoint per coordinate and the
    min clips ``kappa2`` into the box. No renormalization is applied.
    """
    lo, hi = (1.0 - eps) * kappa1, (1.0 + eps) * kappa1
    t_lo, t_hi = metrics._js_terms(lo, kappa2), metrics._js_terms(hi, kappa2)
    c_max = math.sqrt(0.5 * np.sum(np.maximum(t_lo, t_hi)))
    c_min = math.sqrt(0.5 * np.sum(metrics._js_terms(np.clip(kappa2, lo, hi), kappa2)))
    return c_min, c_max


def c1_hat_corners(kappa1: np.ndarray, kappa2: np.ndarray, eps: float) -> np.ndarray:
    """``C1_hat`` at all ``2^n`` corners of the perturbation box (n <= 16)."""
    n = kappa1.size
    if n > 16:
        raise ParameterError("corner enumeration limited to n <= 16")
    bits = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(float)
    factors = 1.0 - eps + 2.0 * eps * bits
    return np.sqrt(metrics.js_divergence_batch(kappa1 * factors, np.broadcast_to(kappa2, factors.shape)))


def verify_c1_error(kappa1, kappa2, eps: float, tol: float = 1e-9, method: str = "exact") -> BoundCheck:
    k1, k2 = metrics.as_mass(kappa1), metrics.as_mass(kappa2)
    c1_true = metrics.c1(k1, k2)
    if method == "corners":
        vals = c1_hat_corners(k1, k2, eps)
        c_min, c_max = float(vals.min()), float(vals.max())
    else:
        c_min, c_max = c1_hat_range(k1, k2, eps)
    lhs = max(c_max - c1_true, c1_true - c_min, 0.0)
    return BoundCheck(
        "c1_error",
        lhs,
        c1_error_bound(eps),
        tol,
        digest_arrays(k1, k2, [eps]),
        info={"c1": c1_true, "c1_hat_min": c_min, "c1_hat_max": c_max, "method": method},
    )


def random_c1_instance(master_seed: int, index: int, max_support: int = 12):
    rng = derive_rng(master_seed, "c1", index)
    n = int(rng.integers(2, max_support + 1))
    return random_prior(rng, n, 1e-6), random_prior(rng, n, 1e-6)


def verify_privacy_estimation_error(instances, eps: float) -> dict:
    """Error of ``eps_hat = 2 C1_hat - C2 TV`` against ``eps_tilde = 2 C1 - C2 TV``.

    ``instances`` yields ``(kappa1, kappa2, c2, tv)``; ``C1_hat`` ranges over
    the perturbation box. The factor-2 bound is asserted; the 3/2 factor is
    only measured.
    """
    bound = c1_error_bound(eps)
    checks, rate_hits, n = [], 0, 0
    for k1, k2, c2_v, tv in instances:
        c1_true = metrics.c1(k1, k2)
        c_min, c_max = c1_hat_range(k1, k2, eps)
        tilde = metrics.eps_tilde(c1_true, c2_v, tv)
        err = max(abs(metrics.eps_tilde(c, c2_v, tv) - tilde) for c in (c_min, c_max))
        checks.append(
            BoundCheck("eps_p_error.factor2", err, 2.0 * bound, 1e-12, digest_arrays(k1, k2, [eps, c2_v, tv]))
        )
        rate_hits += err <= 1.5 * bound + 1e-12
        n += 1
    return {
        "checks": checks,
        "bound": bound,
        "three_halves_pass_rate": rate_hits / n if n else math.nan,
        "instances": n,
    }
