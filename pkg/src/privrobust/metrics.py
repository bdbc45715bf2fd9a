"""Exact Bayesian privacy quantities over finite kernels.

Natural logarithms throughout. ``+inf`` is a legitimate value for the LDP
level of kernels whose columns mix zero and non-zero entries.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError, UndefinedPosteriorError
from .mechanism import DiscreteDistribution, StochasticKernel, as_mass, make_identity
from .seeding import digest_arrays



# ---------------------------------------------------------------- divergences


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p, q = as_mass(p), as_mass(q)
    if p.shape != q.shape or p.ndim < 1:
        raise ParameterError(f"support mismatch: {p.shape} vs {q.shape}")
    return p, q


def _js_terms(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-point contribution ``p log(p/m) + q log(q/m)`` with ``m = (p+q)/2``.

    Written as ``s/2 * h(u)`` where ``s = p+q``, ``u = (p-q)/s`` and
    ``h(u) = (1+u)log(1+u) + (1-u)log(1-u)``. For ``|u| < 1/2`` the form
    ``2u*atanh(u) + log1p(-u^2)`` keeps full relative precision when ``p``
    and ``q`` are nearly equal (the ABP takes a square root of the sum).
    Otherwise ``1 +- u`` are formed directly as ``2p/s`` and ``2q/s`` so
    nearly disjoint supports lose nothing to cancellation in ``1 - |u|``.
    Works on any non-negative vectors, normalized or not.
    """
    p, q = np.broadcast_arrays(np.asarray(p, float), np.asarray(q, float))
    s = p + q
    live = s > 0
    safe = np.where(live, s, 1.0)
    u = np.where(live, (p - q) / safe, 0.0)
    near = np.abs(u) < 0.5
    uc = np.where(near, u, 0.0)
    h_near = 2.0 * uc * np.arctanh(uc) + np.log1p(-uc * uc)
    a, b = 2.0 * p / safe, 2.0 * q / safe
    with np.errstate(divide="ignore", invalid="ignore"):
        h_far = np.where(a > 0, a * np.log(a), 0.0) + np.where(b > 0, b * np.log(b), 0.0)
    h = np.where(near, h_near, h_far)
    return np.where(live, 0.5 * s * np.maximum(h, 0.0), 0.0)


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence, in ``[0, ln 2]`` for probability vectors."""
    p, q = _pair(p, q)
    return float(0.5 * np.sum(_js_terms(p, q), axis=-1))


def js_divergence_batch(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise JS for stacked vectors (last axis is the support)."""
    return 0.5 * np.sum(_js_terms(np.asarray(p, float), np.asarray(q, float)), axis=-1)


def kl_divergence(p, q) -> float:
    p, q = _pair(p, q)
    if np.any((q == 0) & (p > 0)):
        return math.inf
    mask = p > 0
    return float(max(np.sum(p[mask] * np.log(p[mask] / q[mask])), 0.0))


def tv_distance(p, q) -> float:
    p, q = _pair(p, q)
    return float(min(0.5 * np.sum(np.abs(p - q)), 1.0))


# ---------------------------------------------------------------- posteriors


def output_marginal(kernel: StochasticKernel, prior) -> np.ndarray:
    """``P_W(w) = sum_d prior(d) K[d][w]``."""
    prior = as_mass(prior)
    if prior.shape != (kernel.n_inputs,):
        raise ParameterError("prior support does not match kernel inputs")
    return prior @ kernel.rows


def posterior(kernel: StochasticKernel, prior, w) -> DiscreteDistribution:
    """Bayes rule: ``K[d][w] * prior(d) / P_W(w)``."""
    prior = as_mass(prior)
    j = kernel.output_index(w)
    joint = kernel.rows[:, j] * prior
    marginal = joint.sum()
    if marginal <= 0:
        raise UndefinedPosteriorError(f"output {w!r} has zero marginal probability")
    post = joint / marginal
    return DiscreteDistribution(post / post.sum())


def ldp_epsilon(kernel: StochasticKernel) -> float:
    """``max_{w,d,d'} ln(K[d][w] / K[d'][w])``; ``+inf`` for mixed-zero columns."""
    rows = kernel.rows
    cmax, cmin = rows.max(axis=0), rows.min(axis=0)
    live = cmax > 0
    if np.any(cmin[live] == 0):
        return math.inf
    return float(np.max(np.log(cmax[live]) - np.log(cmin[live]), initial=0.0))


def mbp_xi(kernel: StochasticKernel, prior) -> float:
    """Maximum Bayesian privacy level under ``prior``.

    Max over reachable outputs and positive-mass inputs of
    ``|ln(posterior(d|w) / prior(d))|``.
    """
    prior = as_mass(prior)
    marginal = output_marginal(kernel, prior)
    keep = prior > 0
    worst = 0.0
    for j in np.flatnonzero(marginal > 0):
        post = kernel.rows[:, j] * prior / marginal[j]
        with np.errstate(divide="ignore"):
            ratio = np.abs(np.log(post[keep]) - np.log(prior[keep]))
        worst = max(worst, float(ratio.max()))
    return worst


def mbp_xi_batch(kernel: StochasticKernel, priors: np.ndarray) -> np.ndarray:
    """Vectorized :func:`mbp_xi` for many strictly positive priors.

    Uses ``posterior(d|w)/prior(d) = K[d][w] / P_W(w)``.
    """
    priors = np.atleast_2d(np.asarray(priors, float))
    marg = priors @ kernel.rows
    with np.errstate(divide="ignore"):
        logk = np.log(kernel.rows)
        logm = np.log(marg)
    gap = np.abs(logk[None, :, :] - logm[:, None, :])
    gap = np.where((marg > 0)[:, None, :], gap, 0.0)
    return gap.reshape(len(priors), -1).max(axis=1)


def mbp_xi_sup(kernel: StochasticKernel) -> float:
    """Sup of :func:`mbp_xi` over all strictly positive priors.

    The sup is approached as the prior concentrates on a single input, giving
    ``max_{w,d,d'} |ln(K[d][w]/K[d'][w])|`` which equals the LDP level.
    """
    return ldp_epsilon(kernel)


def posterior_mixture(kernel: StochasticKernel, true_prior, attacker_prior) -> DiscreteDistribution:
    """Attacker's expected posterior F^A.

    Per-output posteriors use the attacker's prior; outputs are weighted by
    their marginal under the true prior.
    """
    true_prior, attacker_prior = as_mass(true_prior), as_mass(attacker_prior)
    p_true = output_marginal(kernel, true_prior)
    p_att = output_marginal(kernel, attacker_prior)
    live = p_true > 0
    if np.any(p_att[live] <= 0):
        raise UndefinedPosteriorError("attacker posterior undefined for a reachable output")
    # sum_w K[d][w] * pi_B(d) / P_B(w) * P_true(w)
    weights = np.where(live, p_true / np.where(live, p_att, 1.0), 0.0)
    mix = attacker_prior * (kernel.rows @ weights)
    return DiscreteDistribution(mix / mix.sum(), support=None)


def abp_epsilon(kernel: StochasticKernel, true_prior, attacker_prior) -> float:
    """Average Bayesian privacy: ``sqrt(JS(F^A || F^B))`` with F^B the attacker prior."""
    fa = posterior_mixture(kernel, true_prior, attacker_prior)
    return math.sqrt(js_divergence(fa, as_mass(attacker_prior)))


def prior_mismatch_eps(true_prior, attacker_prior) -> float:
    """``max_d |ln(F^B(d) / f_D(d))|``; both priors must be strictly positive."""
    f, b = _pair(true_prior, attacker_prior)
    if np.any(f <= 0) or np.any(b <= 0):
        raise ParameterError("prior mismatch needs strictly positive priors")
    return float(np.max(np.abs(np.log(b) - np.log(f))))


def unprotected_belief(true_prior, attacker_prior) -> DiscreteDistribution:
    """F^O: the posterior mixture when the data itself is released."""
    n = as_mass(true_prior).size
    return posterior_mixture(make_identity(n), true_prior, attacker_prior)


def c1(f_o, f_b) -> float:
    return math.sqrt(js_divergence(f_o, f_b))


def c2(xi: float) -> float:
    if xi < 0:
        raise ParameterError("xi must be >= 0")
    return 0.5 * math.expm1(2.0 * xi)


def eps_tilde(c1_value: float, c2_value: float, tv: float) -> float:
    return 2.0 * c1_value - c2_value * tv


# ---------------------------------------------------------------- aggregates


@dataclass(frozen=True)
class BeliefSet:
    true_prior: DiscreteDistribution
    attacker_prior: DiscreteDistribution
    posterior_mixture: DiscreteDistribution
    unprotected_belief: DiscreteDistribution | None = None


def belief_set(kernel: StochasticKernel, true_prior, attacker_prior) -> BeliefSet:
    tp = true_prior if isinstance(true_prior, DiscreteDistribution) else DiscreteDistribution(true_prior)
    ap = attacker_prior if isinstance(attacker_prior, DiscreteDistribution) else DiscreteDistribution(attacker_prior)
    return BeliefSet(tp, ap, posterior_mixture(kernel, tp, ap), unprotected_belief(tp, ap))


@dataclass(frozen=True)
class PrivacyReport:
    eps_ldp: float
    xi_mbp: float
    xi_mbp_sup: float
    eps_abp: float
    prior_mismatch_eps: float
    c1: float
    c2: float
    tv: float
    eps_tilde: float
    kernel_digest: str = ""
    prior_digest: str = ""

    def to_dict(self) -> dict:
        return {k: (_jsonable(v)) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self, header: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(self.to_dict()), lineterminator="\n")
        if header:
            writer.writeheader()
        writer.writerow(self.to_dict())
        return buf.getvalue()


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def privacy_report(kernel: StochasticKernel, true_prior, attacker_prior=None, tv: float | None = None) -> PrivacyReport:
    """Every exact quantity for one (kernel, prior pair).

    ``tv`` defaults to the total variation between the unprotected release
    (the true prior, read as a distribution over outputs) and the protected
    output marginal; that needs a square kernel.
    """
    true_prior = as_mass(true_prior)
    attacker_prior = true_prior if attacker_prior is None else as_mass(attacker_prior)
    if tv is None:
        if kernel.n_inputs != kernel.n_outputs:
            raise ParameterError("tv must be given explicitly for non-square kernels")
        tv = tv_distance(true_prior, output_marginal(kernel, true_prior))
    xi = mbp_xi(kernel, true_prior)
    c1_v = c1(unprotected_belief(true_prior, attacker_prior), attacker_prior)
    c2_v = c2(xi)
    return PrivacyReport(
        eps_ldp=ldp_epsilon(kernel),
        xi_mbp=xi,
        xi_mbp_sup=mbp_xi_sup(kernel),
        eps_abp=abp_epsilon(kernel, true_prior, attacker_prior),
        prior_mismatch_eps=prior_mismatch_eps(true_prior, attacker_prior),
        c1=c1_v,
        c2=c2_v,
        tv=float(tv),
        eps_tilde=eps_tilde(c1_v, c2_v, float(tv)),
        kernel_digest=kernel.digest(),
        prior_digest=digest_arrays(true_prior, attacker_prior),
    )
