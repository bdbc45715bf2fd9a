import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from privrobust import metrics
from privrobust.errors import ParameterError, UndefinedPosteriorError
from privrobust.mechanism import (
    StochasticKernel,
    make_constant_mechanism,
    make_identity,
    make_randomized_response,
    random_kernel,
)

RR = make_randomized_response(2, 0.25)


def simplex(n_min=2, n_max=8, floor=0.0):
    def build(w):
        w = np.asarray(w, float) + floor
        return w / w.sum()

    return st.integers(n_min, n_max).flatmap(
        lambda n: st.lists(st.floats(1e-3, 1.0), min_size=n, max_size=n).map(build)
    )


def pair(floor=0.0):
    return st.integers(2, 8).flatmap(
        lambda n: st.tuples(
            st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n),
            st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n),
        )
    ).map(lambda t: tuple(_norm(np.asarray(v) + floor) for v in t)).filter(lambda t: t[0] is not None and t[1] is not None)


def _norm(v):
    s = v.sum()
    return v / s if s > 0 else None


def kernels():
    return st.tuples(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(2, 6)).map(
        lambda t: random_kernel(t[0], t[1], t[2], 1e-3)
    )


# ---------------------------------------------------------------- oracles


def js_mp(p, q):
    """Direct summation at 50 digits."""
    mpmath.mp.dps = 50
    total = mpmath.mpf(0)
    for a, b in zip(p, q):
        a, b = mpmath.mpf(float(a)), mpmath.mpf(float(b))
        m = (a + b) / 2
        if a > 0:
            total += a * mpmath.log(a / m) / 2
        if b > 0:
            total += b * mpmath.log(b / m) / 2
    return float(total)


def posterior_mixture_loop(rows, true_prior, att):
    n, m = rows.shape
    out = np.zeros(n)
    for w in range(m):
        p_true = sum(true_prior[d] * rows[d, w] for d in range(n))
        p_att = sum(att[d] * rows[d, w] for d in range(n))
        if p_true == 0:
            continue
        for d in range(n):
            out[d] += p_true * rows[d, w] * att[d] / p_att
    return out


def mbp_enumerate(rows, prior):
    worst = 0.0
    for w in range(rows.shape[1]):
        marg = sum(prior[d] * rows[d, w] for d in range(rows.shape[0]))
        if marg == 0:
            continue
        for d in range(rows.shape[0]):
            post = rows[d, w] * prior[d] / marg
            worst = max(worst, abs(math.log(post / prior[d])) if post > 0 else math.inf)
    return worst


# ---------------------------------------------------------------- divergences


def test_js_examples():
    assert metrics.js_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert metrics.js_divergence([1, 0], [0, 1]) == pytest.approx(math.log(2), abs=1e-15)
    p, q = [0.5, 0.5], [0.75, 0.25]
    assert metrics.js_divergence(p, q) == pytest.approx(js_mp(p, q), rel=1e-13)
    assert metrics.js_divergence(p, q) == pytest.approx(0.03382, abs=5e-6)


def test_tv_kl_examples():
    assert metrics.tv_distance([0.5, 0.5], [0.75, 0.25]) == pytest.approx(0.25, abs=1e-15)
    assert metrics.kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf
    assert metrics.kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))


def test_support_mismatch():
    for fn in (metrics.js_divergence, metrics.kl_divergence, metrics.tv_distance):
        with pytest.raises(ParameterError):
            fn([0.5, 0.5], [1.0, 0.0, 0.0])


@given(pair())
def test_js_matches_high_precision(pq):
    p, q = pq
    assert metrics.js_divergence(p, q) == pytest.approx(js_mp(p, q), rel=1e-10, abs=1e-15)


def test_js_relative_precision_near_equal():
    p = np.array([0.4, 0.6])
    q = p + np.array([1e-9, -1e-9])
    assert metrics.js_divergence(p, q) == pytest.approx(js_mp(p, q), rel=1e-6)


@given(pair())
def test_js_symmetric_and_bounded(pq):
    p, q = pq
    a, b = metrics.js_divergence(p, q), metrics.js_divergence(q, p)
    assert a == pytest.approx(b, abs=1e-15)
    assert 0.0 <= a <= math.log(2) + 1e-15


@given(st.integers(2, 6).flatmap(lambda n: st.lists(
    st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n), min_size=3, max_size=3)))
def test_sqrt_js_triangle(vs):
    vs = [np.asarray(v) for v in vs]
    assume(all(v.sum() > 0 for v in vs))
    p, q, r = (v / v.sum() for v in vs)
    d = lambda a, b: math.sqrt(metrics.js_divergence(a, b))
    assert d(p, r) <= d(p, q) + d(q, r) + 1e-12


@given(pair(floor=1e-6))
def test_pinsker_and_ranges(pq):
    p, q = pq
    tv, kl = metrics.tv_distance(p, q), metrics.kl_divergence(p, q)
    assert 0 <= tv <= 1 and kl >= 0
    assert tv <= math.sqrt(kl / 2) + 1e-12


def test_js_batch_matches_scalar(rng):
    p = rng.dirichlet(np.ones(5), size=20)
    q = rng.dirichlet(np.ones(5), size=20)
    np.testing.assert_allclose(metrics.js_divergence_batch(p, q),
                               [metrics.js_divergence(a, b) for a, b in zip(p, q)], rtol=1e-14)


# ---------------------------------------------------------------- posterior and LDP


def test_posterior_examples():
    np.testing.assert_allclose(metrics.posterior(RR, [0.5, 0.5], 0).mass, [0.75, 0.25], atol=1e-15)
    np.testing.assert_array_equal(metrics.posterior(make_identity(3), [0.2, 0.3, 0.5], 1).mass, [0, 1, 0])
    prior = [0.1, 0.2, 0.7]
    np.testing.assert_allclose(metrics.posterior(make_constant_mechanism(3, 0), prior, 0).mass, prior)
    with pytest.raises(UndefinedPosteriorError):
        metrics.posterior(make_constant_mechanism(3, 0), prior, 1)


def test_ldp_examples():
    # brute-force max over all entry ratios
    brute = max(math.log(RR.rows[d, w] / RR.rows[e, w]) for w in range(2) for d in range(2) for e in range(2))
    assert metrics.ldp_epsilon(RR) == pytest.approx(math.log(3), abs=1e-15)
    assert metrics.ldp_epsilon(RR) == pytest.approx(brute, abs=1e-15)
    assert metrics.ldp_epsilon(make_constant_mechanism(4)) == 0.0
    assert metrics.ldp_epsilon(make_identity(3)) == math.inf


@pytest.mark.parametrize("k,p", [(2, 0.1), (3, 0.4), (5, 0.3)])
def test_ldp_randomized_response_closed_form(k, p):
    assert metrics.ldp_epsilon(make_randomized_response(k, p)) == pytest.approx(math.log((1 - p) * (k - 1) / p))


def test_ldp_ignores_unreachable_outputs():
    k = StochasticKernel([[0.5, 0.5, 0.0], [0.25, 0.75, 0.0]])
    assert metrics.ldp_epsilon(k) == pytest.approx(math.log(2))


def test_mbp_examples():
    # two-sided bound: posterior/prior is 1.5 for d=w and 0.5 for d!=w, so xi = ln 2
    assert metrics.mbp_xi(RR, [0.5, 0.5]) == pytest.approx(mbp_enumerate(RR.rows, [0.5, 0.5]), abs=1e-15)
    assert metrics.mbp_xi(RR, [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    assert metrics.mbp_xi(make_constant_mechanism(3), [0.2, 0.3, 0.5]) == 0.0
    # the posterior is a point mass, so the off-diagonal ratio is 0 and the two-sided level is unbounded
    assert metrics.mbp_xi(make_identity(4), np.full(4, 0.25)) == math.inf


def test_mbp_sup_by_grid_search():
    t = np.concatenate([np.logspace(-12, -1, 200), np.linspace(0.1, 0.9, 81)])
    grid = np.column_stack([t, 1 - t])
    best = metrics.mbp_xi_batch(RR, grid).max()
    assert best <= metrics.mbp_xi_sup(RR) + 1e-12
    assert best == pytest.approx(math.log(3), abs=1e-9)
    assert metrics.mbp_xi_sup(make_constant_mechanism(3)) == 0.0


def test_mbp_sup_random_kernel_vertex_limit():
    k = random_kernel(1, 3, 3, 1e-2)
    priors = []
    for v in range(3):
        p = np.full(3, 1e-13)
        p[v] = 1 - 2e-13
        priors.append(p)
    best = metrics.mbp_xi_batch(k, np.array(priors)).max()
    assert best <= metrics.ldp_epsilon(k) + 1e-12
    assert metrics.mbp_xi_sup(k) == pytest.approx(best, abs=1e-9)


@given(kernels(), st.integers(0, 2**32 - 1))
def test_mbp_batch_matches_enumeration(kernel, seed):
    prior = np.random.default_rng(seed).dirichlet(np.ones(kernel.n_inputs)) + 1e-3
    prior /= prior.sum()
    want = mbp_enumerate(kernel.rows, prior)
    assert metrics.mbp_xi(kernel, prior) == pytest.approx(want, rel=1e-12)
    assert metrics.mbp_xi_batch(kernel, prior[None])[0] == pytest.approx(want, rel=1e-12)


@given(kernels(), st.integers(0, 2**32 - 1))
def test_mbp_below_ldp(kernel, seed):
    prior = np.random.default_rng(seed).dirichlet(np.ones(kernel.n_inputs)) + 1e-6
    prior /= prior.sum()
    assert metrics.mbp_xi(kernel, prior) <= metrics.ldp_epsilon(kernel) + 1e-12


# ---------------------------------------------------------------- ABP side


def test_posterior_mixture_examples():
    prior = [0.1, 0.2, 0.7]
    k = random_kernel(3, 3, 4, 0.01)
    np.testing.assert_allclose(metrics.posterior_mixture(k, prior, prior).mass, prior, atol=1e-12)
    att = [0.3, 0.3, 0.4]
    np.testing.assert_allclose(metrics.posterior_mixture(make_constant_mechanism(3), prior, att).mass, att)
    fa = metrics.posterior_mixture(RR, [0.5, 0.5], [0.6, 0.4]).mass
    np.testing.assert_allclose(fa, posterior_mixture_loop(RR.rows, [0.5, 0.5], [0.6, 0.4]), rtol=1e-14)
    np.testing.assert_allclose(fa, [0.57576, 0.42424], atol=5e-6)


def test_posterior_mixture_undefined():
    k = StochasticKernel([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(UndefinedPosteriorError):
        metrics.posterior_mixture(k, [0.5, 0.5], [1.0, 0.0])


@given(kernels(), st.integers(0, 2**32 - 1))
def test_posterior_mixture_matches_loop(kernel, seed):
    rng = np.random.default_rng(seed)
    tp, ap = (rng.dirichlet(np.ones(kernel.n_inputs)) for _ in range(2))
    want = posterior_mixture_loop(kernel.rows, tp, ap)
    np.testing.assert_allclose(metrics.posterior_mixture(kernel, tp, ap).mass, want / want.sum(), rtol=1e-10)


def test_abp_examples():
    prior = [0.2, 0.8]
    assert metrics.abp_epsilon(RR, prior, prior) <= 1e-12
    assert metrics.abp_epsilon(make_constant_mechanism(2), [0.5, 0.5], [0.6, 0.4]) == 0.0
    want = math.sqrt(js_mp(posterior_mixture_loop(RR.rows, [0.5, 0.5], [0.6, 0.4]), [0.6, 0.4]))
    got = metrics.abp_epsilon(RR, [0.5, 0.5], [0.6, 0.4])
    assert got == pytest.approx(want, rel=1e-10)
    assert got == pytest.approx(0.0174, abs=5e-5)


@given(kernels(), st.integers(0, 2**32 - 1))
def test_total_probability_identity(kernel, seed):
    prior = np.random.default_rng(seed).dirichlet(np.ones(kernel.n_inputs))
    assert metrics.abp_epsilon(kernel, prior, prior) <= 1e-12


def test_prior_mismatch():
    assert metrics.prior_mismatch_eps([0.5, 0.5], [0.5, 0.5]) == 0.0
    # max(|ln 1.2|, |ln 0.8|) is attained by the second term
    assert metrics.prior_mismatch_eps([0.5, 0.5], [0.6, 0.4]) == pytest.approx(max(math.log(1.2), -math.log(0.8)))
    with pytest.raises(ParameterError):
        metrics.prior_mismatch_eps(np.full(4, 0.25), [0.5, 0.5, 0.0, 0.0])


def test_constants():
    assert metrics.c2(0.0) == 0.0
    assert metrics.c2(math.log(1.5)) == pytest.approx(0.625, abs=1e-15)
    with pytest.raises(ParameterError):
        metrics.c2(-0.1)
    f = [0.3, 0.7]
    assert metrics.c1(f, f) == 0.0
    assert metrics.eps_tilde(0.0, 0.625, 0.2) == pytest.approx(-0.125)


@given(st.floats(0, 20))
def test_c2_dominates_xi(xi):
    assert metrics.c2(xi) >= xi


def test_unprotected_belief_is_true_prior_reweighted():
    # identity release reveals d; the attacker's belief mixture equals the true prior
    tp, ap = np.array([0.2, 0.3, 0.5]), np.array([0.4, 0.4, 0.2])
    np.testing.assert_allclose(metrics.unprotected_belief(tp, ap).mass, tp, atol=1e-15)


def test_privacy_report_serialization():
    rep = metrics.privacy_report(RR, [0.5, 0.5], [0.6, 0.4])
    d = json.loads(rep.to_json())
    assert d["eps_ldp"] == pytest.approx(math.log(3))
    assert d["xi_mbp"] == pytest.approx(math.log(2))
    assert d["kernel_digest"] == RR.digest()
    assert rep.csv_row(header=True).splitlines()[0].startswith("eps_ldp,")
    inf_rep = metrics.privacy_report(make_identity(2), [0.5, 0.5], tv=0.0)
    assert json.loads(inf_rep.to_json())["eps_ldp"] == "inf"
    with pytest.raises(ParameterError):
        metrics.privacy_report(random_kernel(0, 2, 3, 0.01), [0.5, 0.5])


def test_belief_set():
    bs = metrics.belief_set(RR, [0.5, 0.5], [0.6, 0.4])
    np.testing.assert_allclose(bs.posterior_mixture.mass, metrics.posterior_mixture(RR, [0.5, 0.5], [0.6, 0.4]).mass)
