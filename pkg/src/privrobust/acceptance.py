"""The ten acceptance criteria as runnable, seed-driven functions.

Each ``criterion_N`` returns a :class:`CriterionResult`. ``run_bundle``
runs criteria 1 to 9; criterion 10 reruns that bundle and compares the
verdict payloads byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import estimators, metrics, verify
from .attack import InversionConfig, regression_task, translation_task, verify_privacy_distortion
from .robustness import verify_privacy_robustness
from .seeding import derive_rng, digest_arrays
from .verify import BoundCheck


@dataclass(frozen=True)
class AcceptanceConfig:
    seed: int = 0
    kernels: int = 1000
    priors_per_kernel: int = 100
    pac_instances: int = 500
    mismatch_eps: tuple = (0.0, 0.1, 0.5)
    lemma_deltas: tuple = (0.1, 0.2, 0.4, 0.8)
    lemma_rounds: tuple = (100, 1000)
    lemma_seeds: int = 20
    lemma_pass_rate: float = 0.95
    robust_radii: tuple = (0.1, 0.25, 0.5)
    robust_deltas: tuple = (0.1, 0.2, 0.4, 0.8)
    robust_rounds: int = 1000
    robust_seeds: int = 5
    robust_samples: int = 1000
    kappa1_grid: tuple = (0.1, 0.5, 0.9)
    kappa1_T: tuple = (100, 1000)
    kappa1_eps: tuple = (0.1, 0.2)
    kappa1_trials: int = 100_000
    c1_pairs: int = 1000
    c1_eps: tuple = (0.05, 0.1, 0.3)
    c1_max_support: int = 12
    pipeline_points: int = 8
    pipeline_models: int = 4
    pipeline_T: int = 1000
    pipeline_threshold: float = 0.5

    @classmethod
    def quick(cls, seed: int = 0) -> "AcceptanceConfig":
        """Reduced counts for smoke runs; same code paths as the full bundle."""
        return cls(seed=seed, kernels=20, priors_per_kernel=10, pac_instances=20, lemma_seeds=2,
                   lemma_rounds=(100,), robust_seeds=2, robust_samples=200, kappa1_trials=10_000,
                   c1_pairs=20, pipeline_T=200)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    checks: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        extra = ", ".join(f"{k}={_fmt(v)}" for k, v in self.summary.items())
        return f"criterion {self.number} [{'PASS' if self.passed else 'FAIL'}] {self.title}: {extra}"

    def to_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed,
                "summary": {k: verify._num(v) for k, v in self.summary.items()}}


def _fmt(v):
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def _worst(checks: list[BoundCheck]) -> BoundCheck:
    return min(checks, key=lambda c: c.slack)


def _all_hold(checks) -> tuple[bool, dict]:
    s = verify.summarize(checks)
    return s["failed"] == 0 and s["asserted"] > 0, s


def _timed(fn):
    def wrapper(cfg: AcceptanceConfig) -> CriterionResult:
        t0 = time.perf_counter()
        res = fn(cfg)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------- 1-4: exact enumeration


def _kernels(cfg):
    return [verify.random_kernel_instance(cfg.seed, i) for i in range(cfg.kernels)]


@_timed
def criterion_1(cfg: AcceptanceConfig) -> CriterionResult:
    """``mbp_xi <= ldp`` over random priors and ``ldp <= 2 xi_sup`` per kernel."""
    checks = []
    for i, k in enumerate(_kernels(cfg)):
        rng = derive_rng(cfg.seed, "c1-priors", i)
        priors = np.array([verify.random_prior(rng, k.n_inputs) for _ in range(cfg.priors_per_kernel)])
        per = verify.verify_ldp_mbp(k, priors)
        # one verdict per kernel and direction: the tightest prior stands for all
        checks.append(_worst(per[:-1]))
        checks.append(per[-1])
    ok, s = _all_hold(checks)
    return CriterionResult(1, "LDP vs MBP", ok, checks,
                           {"kernels": cfg.kernels, "priors": cfg.priors_per_kernel, "worst_slack": s["worst_slack"]})


@_timed
def criterion_2(cfg: AcceptanceConfig) -> CriterionResult:
    """ABP vanishes when the attacker knows the true prior."""
    checks = []
    for i, k in enumerate(_kernels(cfg)):
        prior = verify.random_prior(derive_rng(cfg.seed, "c2-prior", i), k.n_inputs)
        checks.append(BoundCheck("total_probability", metrics.abp_epsilon(k, prior, prior), 0.0, 1e-12,
                                 digest_arrays(k.rows, prior)))
    ok, s = _all_hold(checks)
    return CriterionResult(2, "total-probability identity", ok, checks,
                           {"pairs": len(checks), "max_abp": max(c.lhs for c in checks)})


@_timed
def criterion_3(cfg: AcceptanceConfig) -> CriterionResult:
    """ABP under a mismatched attacker prior vs the MBP-derived bound."""
    checks = []
    for i, k in enumerate(_kernels(cfg)):
        rng = derive_rng(cfg.seed, "c3", i)
        prior = verify.random_prior(rng, k.n_inputs)
        for eps in cfg.mismatch_eps:
            att = verify.tilted_prior(rng, prior, eps)
            checks.append(verify.verify_mbp_abp(k, prior, att))
    ok, s = _all_hold(checks)
    return CriterionResult(3, "MBP to ABP bound", ok, checks, {"cases": len(checks), "worst_slack": s["worst_slack"]})


@_timed
def criterion_4(cfg: AcceptanceConfig) -> CriterionResult:
    """Failure probability under any input vs ``(1 + 4 xi) beta*``, exactly enumerated."""
    checks = []
    for i in range(cfg.pac_instances):
        pm = verify.random_pac_mechanism(cfg.seed, i)
        checks.append(verify.verify_pac_robustness(pm))
        checks.append(verify.verify_pac_robustness_per_reference(pm))
    ok, s = _all_hold(checks)
    worst_ratio = max(c.info["max_ratio"] / c.info["one_plus_4xi"] for c in checks if "max_ratio" in c.info)
    return CriterionResult(4, "PAC robustness", ok, checks,
                           {"instances": cfg.pac_instances, "asserted": s["asserted"],
                            "worst_ratio_over_factor": worst_ratio})


# ---------------------------------------------------------------- 5-6: attacks


@_timed
def criterion_5(cfg: AcceptanceConfig) -> CriterionResult:
    """Leakage vs the distortion lemma; passes when 95% of asserted cells hold."""
    checks = verify_privacy_distortion(translation_task(), cfg.lemma_deltas, cfg.lemma_rounds,
                                       range(cfg.lemma_seeds))
    app = [c for c in checks if c.name == "lemma.appendix" and c.asserted]
    main = [c for c in checks if c.name == "lemma.maintext"]
    rate = sum(c.holds for c in app) / len(app) if app else math.nan
    main_rate = sum(c.holds for c in main) / len(main) if main else math.nan
    skipped = sum(1 for c in checks if c.note.startswith("skipped"))
    return CriterionResult(5, "privacy-distortion lemma", bool(app) and rate >= cfg.lemma_pass_rate, checks,
                           {"asserted": len(app), "pass_rate": rate, "skipped": skipped,
                            "maintext_pass_rate": main_rate})


@_timed
def criterion_6(cfg: AcceptanceConfig) -> CriterionResult:
    """Measured gradient-level robustness vs predicted alpha, both task families."""
    seeds = range(cfg.robust_seeds)
    trans = verify_privacy_robustness(translation_task(), cfg.robust_deltas, cfg.robust_radii,
                                      cfg.robust_rounds, seeds, cfg.robust_samples)
    reg = verify_privacy_robustness(regression_task([1.0], [-0.5]), cfg.robust_deltas, cfg.robust_radii,
                                    cfg.robust_rounds, seeds, cfg.robust_samples)
    checks = trans + reg
    ok, s = _all_hold(checks)
    return CriterionResult(6, "privacy to robustness", ok, checks,
                           {"cells": len(checks), "translation_failed": sum(c.failed for c in trans),
                            "regression_failed": sum(c.failed for c in reg), "worst_slack": s["worst_slack"]})


# ---------------------------------------------------------------- 7-8: estimation theory


@_timed
def criterion_7(cfg: AcceptanceConfig) -> CriterionResult:
    """Deviation frequency of ``kappa1`` estimates vs the Chernoff bound."""
    checks = [
        verify.verify_kappa1_concentration(k, T, e, cfg.kappa1_trials, cfg.seed)
        for k in cfg.kappa1_grid for T in cfg.kappa1_T for e in cfg.kappa1_eps
    ]
    ok, s = _all_hold(checks)
    return CriterionResult(7, "kappa1 concentration", ok, checks,
                           {"cells": len(checks), "worst_slack": s["worst_slack"]})


@_timed
def criterion_8(cfg: AcceptanceConfig) -> CriterionResult:
    """``|C1_hat - C1|`` over the perturbation box vs the theorem bound."""
    checks, rates = [], {}
    for eps in cfg.c1_eps:
        instances = []
        for i in range(cfg.c1_pairs):
            k1, k2 = verify.random_c1_instance(cfg.seed, i, cfg.c1_max_support)
            corner = verify.verify_c1_error(k1, k2, eps, method="corners")
            exact = verify.verify_c1_error(k1, k2, eps, method="exact")
            checks.append(corner)
            checks.append(exact)
            rng = derive_rng(cfg.seed, "c8-eps", i, eps)
            instances.append((k1, k2, metrics.c2(rng.uniform(0.0, 1.0)), rng.uniform(0.0, 1.0)))
        est = verify.verify_privacy_estimation_error(instances, eps)
        checks.extend(est["checks"])
        rates[f"three_halves_rate@{eps}"] = est["three_halves_pass_rate"]
    ok, s = _all_hold(checks)
    return CriterionResult(8, "C1 estimation error", ok, checks, {"cases": len(checks), **rates,
                                                                  "worst_slack": s["worst_slack"]})


# ---------------------------------------------------------------- 9: pipeline


def _pipeline_checks(cfg: AcceptanceConfig, rounds: int, threshold: float, label: str) -> list[BoundCheck]:
    task = translation_task()
    data = derive_rng(cfg.seed, "c9-data").uniform(0.0, 1.0, size=(cfg.pipeline_points, 1))
    prior = np.full(cfg.pipeline_points, 1.0 / cfg.pipeline_points)
    attack = estimators.AttackSpec(rounds, InversionConfig("gd", 0.1))
    sgd = estimators.SgdConfig(steps=50, lr=0.1, batch_size=cfg.pipeline_points, seed=cfg.seed)

    def once():
        return estimators.run_pipeline(task, data, cfg.pipeline_models, sgd, cfg.pipeline_T, threshold,
                                       attack, cfg.seed, prior=prior)

    first, second = once(), once()
    q = estimators.translation_recovery_probability(task, data, rounds, 0.1, threshold)
    xi_closed = estimators.closed_form_xi(q, prior)
    tol = estimators.xi_tolerance(q, cfg.pipeline_T)
    digest = digest_arrays(data, [rounds, threshold])
    same = digest_arrays(first.density.counts, first.ensemble.models) == digest_arrays(
        second.density.counts, second.ensemble.models)
    return [
        BoundCheck(f"pipeline.xi.{label}", abs(first.mbp.xi_hat - xi_closed), tol, 0.0, digest,
                   info={"xi_hat": first.mbp.xi_hat, "xi_closed": xi_closed, "floored": len(first.mbp.floored)}),
        BoundCheck(f"pipeline.reproducible.{label}", 0.0 if same else 1.0, 0.0, 0.0, digest),
    ]


@_timed
def criterion_9(cfg: AcceptanceConfig) -> CriterionResult:
    """Pipeline xi_hat vs the closed form on 1-D translation with no distortion."""
    checks = _pipeline_checks(cfg, 200, cfg.pipeline_threshold, "loose")
    # partial recovery: 20 GD rounds leave a non-trivial per-sample recovery rate
    checks += _pipeline_checks(cfg, 20, 0.05, "partial")
    ok, s = _all_hold(checks)
    return CriterionResult(9, "estimator pipeline", ok, checks,
                           {"xi_hat": checks[0].info["xi_hat"], "xi_closed": checks[0].info["xi_closed"],
                            "partial_gap": checks[2].lhs, "partial_tol": checks[2].rhs})


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9)


def run_bundle(cfg: AcceptanceConfig = AcceptanceConfig(), only=None, progress=None) -> list[CriterionResult]:
    out = []
    for number, fn in enumerate(CRITERIA, start=1):
        if only is not None and number not in only:
            continue
        res = fn(cfg)
        if progress is not None:
            progress(res)
        out.append(res)
    return out


def verdict_payload(results: list[CriterionResult]) -> bytes:
    """Canonical bytes of every verdict; excludes timings."""
    lines = []
    for res in results:
        lines.append(json.dumps(res.to_dict(), sort_keys=True))
        lines.extend(c.to_json() for c in res.checks)
    return ("\n".join(lines) + "\n").encode()


def criterion_10(cfg: AcceptanceConfig, first: list[CriterionResult] | None = None) -> CriterionResult:
    """Rerun the bundle and compare verdict payloads."""
    t0 = time.perf_counter()
    first = run_bundle(cfg) if first is None else first
    a = verdict_payload(first)
    b = verdict_payload(run_bundle(cfg, only={r.number for r in first}))
    ha, hb = hashlib.sha256(a).hexdigest(), hashlib.sha256(b).hexdigest()
    check = BoundCheck("determinism", 0.0 if a == b else 1.0, 0.0, 0.0, ha[:16], info={"rerun": hb[:16]})
    return CriterionResult(10, "determinism", a == b, [check],
                           {"payload_bytes": len(a), "sha256": ha[:16]}, time.perf_counter() - t0)
