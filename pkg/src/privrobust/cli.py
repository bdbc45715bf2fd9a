"""Command-line front end: ``privrobust run`` and ``privrobust emit-plots``.

Exit status of ``run``: 0 when every asserted check passes, 1 when one
fails, 2 on configuration or I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, acceptance, estimators, metrics, verify
from .attack import InversionConfig, attack_once, task_from_config, verify_privacy_distortion
from .errors import ConfigError, PrivRobustError
from .mechanism import GradientPerturbation, as_mass, kernel_from_config, sample_output
from .robustness import verify_privacy_robustness
from .seeding import derive_rng, derive_seed
from .verify import BoundCheck

log = logging.getLogger("privrobust")

OUT_ENV = "PRIVROBUST_OUT"
SUITES = ("mech", "metrics", "verify", "attack", "robust", "estimate", "acceptance")


# ---------------------------------------------------------------- config


def load_schema() -> dict:
    return json.loads(resources.files("privrobust").joinpath("data/config.schema.json").read_text())


def validate_config(config: dict) -> dict:
    """Schema validation; the error names the offending field."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        field = _field_name(err)
        raise ConfigError(f"config field {field!r}: {err.message}", field)
    return config


def _field_name(err: jsonschema.ValidationError) -> str:
    path = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = [name for name in err.validator_value if name not in err.instance]
        path.append(missing[0] if missing else "?")
    elif err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        path.extend(extra[:1])
    return ".".join(path) or "<root>"


def config_digest(config: dict) -> str:
    """sha256 over every result-affecting field (the output location is excluded)."""
    canon = {k: v for k, v in config.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(canon, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def resolve_config(path: str, seed=None, suite=None, trials=None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", "config") from exc
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON (line {exc.lineno}): {exc.msg}", "config") from exc
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object", "<root>")
    for key, value in (("seed", seed), ("suite", suite), ("trials", trials)):
        if value is not None:
            config[key] = value
    return validate_config(config)


def output_root(cli_out: str | None, config: dict) -> Path:
    if cli_out:
        return Path(cli_out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    return Path(config.get("output_dir", "runs"))


# ---------------------------------------------------------------- suites


class SuiteResult:
    def __init__(self, checks, tables=None, extra=None, passed=None, payload=None):
        self.checks = list(checks)
        self.tables = tables or {}
        self.extra = extra or {}
        self.passed = (not any(c.failed for c in self.checks)) if passed is None else passed
        self.payload = payload if payload is not None else _payload(self.checks)


def _payload(checks) -> bytes:
    return "".join(c.to_json() + "\n" for c in checks).encode()


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _tol(config, name, default):
    return float(config.get("tolerances", {}).get(name, default))


def _optimizer(spec: dict | None) -> InversionConfig:
    spec = spec or {}
    return InversionConfig(spec.get("name", "gd"), spec.get("lr"))


def suite_mech(config: dict) -> SuiteResult:
    sub = config.get("mech", {})
    kernel = kernel_from_config(sub.get("kernel", {"type": "rr", "k": 2, "flip_prob": 0.25}))
    d = int(sub.get("input", 0))
    n = int(config.get("trials", sub.get("samples", 10_000)))
    draws = np.asarray(sample_output(kernel, d, derive_rng(config["seed"], "mech", d), size=n))
    freq = np.bincount(draws, minlength=kernel.n_outputs) / n
    row = kernel.rows[d]
    z = _tol(config, "sample_z", 5.0)
    check = BoundCheck("sample_frequency", float(np.max(np.abs(freq - row))),
                       float(z * np.sqrt(np.max(row * (1 - row)) / n)) + 1e-12, 0.0, kernel.digest(),
                       info={"samples": n, "input": d})
    table = _csv(["output", "kernel", "empirical"], [(j, repr(float(row[j])), repr(float(freq[j])))
                                                       for j in range(kernel.n_outputs)])
    eps = metrics.ldp_epsilon(kernel)
    return SuiteResult([check], {"kernel.json": kernel.to_json(), "samples.csv": table},
                       {"ldp_epsilon": verify._num(eps)})


def suite_metrics(config: dict) -> SuiteResult:
    sub = config["metrics"] if "metrics" in config else {"kernel": {"type": "rr", "k": 2, "flip_prob": 0.25}}
    kernel = kernel_from_config(sub["kernel"])
    true_prior = as_mass(sub.get("true_prior", np.full(kernel.n_inputs, 1.0 / kernel.n_inputs)))
    attacker = as_mass(sub.get("attacker_prior", true_prior))
    if true_prior.size != kernel.n_inputs:
        raise ConfigError("true_prior length does not match kernel inputs", "metrics.true_prior")
    if attacker.size != kernel.n_inputs:
        raise ConfigError("attacker_prior length does not match kernel inputs", "metrics.attacker_prior")
    report = metrics.privacy_report(kernel, true_prior, attacker, sub.get("tv"))
    checks = verify.verify_ldp_mbp(kernel, true_prior[None, :], _tol(config, "ldp_mbp", 1e-9))
    checks.append(verify.verify_mbp_abp(kernel, true_prior, attacker, _tol(config, "mbp_abp", 1e-9)))
    if np.array_equal(true_prior, attacker):
        checks.append(BoundCheck("total_probability", report.eps_abp, 0.0, _tol(config, "total_probability", 1e-12),
                                 report.prior_digest))
    return SuiteResult(checks, {"privacy_report.json": report.to_json() + "\n",
                                "privacy_report.csv": report.csv_row(header=True)}, {"report": report.to_dict()})


def suite_verify(config: dict) -> SuiteResult:
    sub = config.get("verify", {})
    base = acceptance.AcceptanceConfig(seed=config["seed"])
    cfg = replace(
        base,
        kernels=sub.get("kernels", 100),
        priors_per_kernel=sub.get("priors", 20),
        pac_instances=sub.get("pac_instances", 100),
        mismatch_eps=tuple(sub.get("mismatch_eps", base.mismatch_eps)),
        c1_pairs=sub.get("c1_pairs", 100),
        c1_eps=tuple(sub.get("c1_eps", base.c1_eps)),
        kappa1_grid=tuple(sub.get("kappa1", base.kappa1_grid)),
        kappa1_T=tuple(sub.get("T", base.kappa1_T)),
        kappa1_eps=tuple(sub.get("kappa1_eps", base.kappa1_eps)),
        kappa1_trials=config.get("trials", base.kappa1_trials),
    )
    results = acceptance.run_bundle(cfg, only={1, 2, 3, 4, 7, 8})
    checks = [c for r in results for c in r.checks]
    rows = []
    for r in results:
        s = verify.summarize(r.checks)
        rows.append((r.title, s["instances"], s["passed"], repr(float(s["worst_slack"]))))
    return SuiteResult(checks, {"suite_table.csv": _csv(["suite", "instances", "pass", "worst_slack"], rows)},
                       {"criteria": [r.to_dict() for r in results]})


def suite_attack(config: dict) -> SuiteResult:
    sub = config.get("attack", {})
    task = task_from_config(sub.get("task", {}))
    cfg = _optimizer(sub.get("optimizer"))
    deltas = sub.get("deltas", [0.1, 0.2, 0.4, 0.8])
    rounds = sub.get("rounds", [100])
    n_seeds = int(config.get("trials", sub.get("seeds", 5)))
    seeds = [derive_seed(config["seed"], "attack", i) % (2**31) for i in range(n_seeds)]
    checks = verify_privacy_distortion(task, deltas, rounds, seeds, cfg, sub.get("p", 0.5))
    rows = [(c.info["delta"], c.info["I"], c.info["seed"], repr(float(c.lhs)), verify._num(c.rhs), c.name,
             c.holds, c.note) for c in checks]
    first = attack_once(task, float(deltas[0]), int(rounds[0]), seeds[0], cfg)
    return SuiteResult(checks, {
        "distortion.csv": _csv(["delta", "I", "seed", "eps_p", "bound", "form", "holds", "note"], rows),
        "trace.csv": first.trace.to_csv(first.original),
    })


def suite_robust(config: dict) -> SuiteResult:
    sub = config.get("robust", {})
    task = task_from_config(sub.get("task", {}))
    n_seeds = int(sub.get("seeds", 5))
    checks = verify_privacy_robustness(
        task, sub.get("deltas", [0.1, 0.2, 0.4, 0.8]), sub.get("radii", [0.1, 0.25, 0.5]),
        int(sub.get("rounds", 1000)), [derive_seed(config["seed"], "robust", i) % (2**31)
                                       for i in range(n_seeds)],
        int(config.get("trials", sub.get("samples", 1000))), int(sub.get("probes", 32)),
        config=_optimizer(sub.get("optimizer")), measure_seed=config["seed"],
    )
    rows = [(c.info["family"], c.info["delta"], c.info["r"], repr(float(c.lhs)), repr(float(c.rhs)),
             repr(float(c.slack)), c.holds) for c in checks]
    return SuiteResult(checks, {"robustness.csv": _csv(
        ["family", "delta", "r", "measured", "predicted_alpha", "slack", "holds"], rows)})


def suite_estimate(config: dict) -> SuiteResult:
    sub = config.get("estimate", {})
    seed = config["seed"]
    task = task_from_config(sub.get("task", {}))
    if "dataset" in sub:
        data = np.asarray(sub["dataset"], float)
        if data.ndim != 2 or data.shape[1] != task.dim:
            raise ConfigError("dataset rows must match the task dimension", "estimate.dataset")
    else:
        data = task.sample(derive_rng(seed, "estimate-data"), int(sub.get("dataset_size", 8)))
    S = len(data)
    sgd_spec = sub.get("sgd", {})
    sgd = estimators.SgdConfig(int(sgd_spec.get("steps", 50)), float(sgd_spec.get("lr", 0.1)),
                               int(sgd_spec.get("batch_size", S)), seed)
    T = int(config.get("trials", sub.get("T", 1000)))
    threshold = float(sub.get("threshold", 0.5))
    rounds = int(sub.get("rounds", 200))
    opt = _optimizer(sub.get("optimizer"))
    attack = estimators.AttackSpec(rounds, opt)
    delta = float(sub.get("delta", 0.0))
    pert = GradientPerturbation("fixed", delta) if delta > 0 else None
    prior = np.full(S, 1.0 / S)
    res = estimators.run_pipeline(task, data, int(sub.get("models", 4)), sgd, T, threshold, attack, seed,
                                  pert, prior, float(sub.get("tv", 0.0)))
    dens = res.density
    digest = verify.digest_arrays(data, [T, threshold, rounds, delta])
    checks = [
        BoundCheck("density.count_range", float(dens.counts.max()), float(T), 0.0, digest),
        BoundCheck("density.row_mass", float(dens.per_model.sum(axis=1).max()), 1.0, 1e-12, digest),
        BoundCheck("mbp.c2_consistency", abs(res.mbp.c2_hat - metrics.c2(res.mbp.xi_hat)), 0.0, 1e-12, digest),
    ]
    closed = None
    if task.family == "translation" and task.dim == 1 and delta == 0 and opt.optimizer == "gd":
        q = estimators.translation_recovery_probability(task, data, rounds, opt.step_size(task), threshold)
        closed = estimators.closed_form_xi(q, prior)
        checks.append(BoundCheck("pipeline.closed_form_xi", abs(res.mbp.xi_hat - closed),
                                 estimators.xi_tolerance(q, T), 0.0, digest,
                                 info={"xi_hat": res.mbp.xi_hat, "xi_closed": closed}))
    gate = estimators.distribution_gate(dens.f_O_hat, prior, float(sub.get("omega_threshold", 0.1)))
    rows = [(m, d, int(dens.counts[m, d]), repr(float(dens.per_model[m, d])))
            for m in range(len(dens.per_model)) for d in range(S)]
    mbp_json = {"xi_hat": res.mbp.xi_hat, "kappa3_hat": res.mbp.kappa3_hat, "c2_hat": res.mbp.c2_hat,
                "floored": list(res.mbp.floored), "w_star_index": res.ensemble.true_model_index(),
                "xi_closed_form": closed}
    eps_json = {**res.eps_tilde.to_dict(), "F_B": prior.tolist(), "T": T, "S": S, "threshold": threshold,
                "models": len(res.ensemble), "distribution_gate": gate}
    return SuiteResult(checks, {
        "density.csv": _csv(["model", "d", "count", "f_hat"], rows),
        "mbp_estimate.json": json.dumps(mbp_json, sort_keys=True, indent=2) + "\n",
        "eps_tilde.json": json.dumps(eps_json, sort_keys=True, indent=2) + "\n",
    })


def suite_acceptance(config: dict) -> SuiteResult:
    sub = config.get("acceptance", {})
    seed = config["seed"]
    cfg = acceptance.AcceptanceConfig.quick(seed) if sub.get("scale") == "quick" else acceptance.AcceptanceConfig(seed)
    if "trials" in config:
        cfg = replace(cfg, kappa1_trials=config["trials"])
    wanted = set(sub.get("criteria", range(1, 11)))
    results = acceptance.run_bundle(cfg, only=wanted - {10}, progress=lambda r: print(r.line(), flush=True))
    if 10 in wanted:
        r10 = acceptance.criterion_10(cfg, results)
        print(r10.line(), flush=True)
        results.append(r10)
    checks = [c for r in results for c in r.checks]
    lines = [r.line() for r in results]
    return SuiteResult(checks, {"criteria.txt": "\n".join(lines) + "\n"},
                       {"criteria": [r.to_dict() for r in results]},
                       passed=all(r.passed for r in results),
                       payload=acceptance.verdict_payload([r for r in results if r.number != 10]))


SUITE_RUNNERS = {
    "mech": suite_mech,
    "metrics": suite_metrics,
    "verify": suite_verify,
    "attack": suite_attack,
    "robust": suite_robust,
    "estimate": suite_estimate,
    "acceptance": suite_acceptance,
}


# ---------------------------------------------------------------- reports


def environment() -> dict:
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "platform": platform.platform()}


def write_outputs(out_dir: Path, config: dict, result: SuiteResult, wall: float) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = verify.summarize(result.checks)
    report = {
        "suite": config["suite"],
        "seed": config["seed"],
        "config": config,
        "config_digest": config_digest(config),
        "version": __version__,
        "passed": result.passed,
        "summary": {k: verify._num(v) for k, v in summary.items()},
        "skipped": [c.to_dict() for c in result.checks if not c.asserted],
        "checks": [c.to_dict() for c in result.checks],
        "extra": result.extra,
        "wall_time_s": wall,
        "environment": environment(),
    }
    (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    (out_dir / "verdicts.jsonl").write_bytes(result.payload)
    (out_dir / "summary.csv").write_text(_csv(
        ["suite", "instances", "pass", "worst_slack"],
        [(config["suite"], summary["instances"], summary["passed"], verify._num(summary["worst_slack"]))]))
    for name, text in result.tables.items():
        (out_dir / name).write_text(text)
    return out_dir / "report.json"


def emit_plot_data(report: dict) -> str:
    """Long-format ``series,x,y`` rows from a report's checks."""
    rows = []
    for i, c in enumerate(report.get("checks", [])):
        info = c.get("info", {})
        if c["name"] == "lemma.appendix" and c["asserted"]:
            rows.append(("eps_p", info["delta"], c["lhs"]))
            rows.append(("lemma_bound", info["delta"], c["rhs"]))
        elif c["name"] == "privacy_robustness":
            rows.append((f"measured:{info['family']}", info["r"], c["lhs"]))
            rows.append((f"alpha:{info['family']}", info["r"], c["rhs"]))
        if isinstance(c.get("slack"), (int, float)) and math.isfinite(c["slack"]):
            rows.append((f"slack:{c['name']}", i, c["slack"]))
    return _csv(["series", "x", "y"], rows)


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privrobust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one suite from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--suite", choices=SUITES)
    run.add_argument("--trials", type=int)
    plots = sub.add_parser("emit-plots", help="turn a report into long-format plot CSV")
    plots.add_argument("--report", required=True)
    plots.add_argument("--out", help="CSV path (default: plot_data.csv beside the report)")
    return parser


def cmd_run(args) -> int:
    try:
        config = resolve_config(args.config, args.seed, args.suite, args.trials)
        root = output_root(args.out, config)
        out_dir = root / f"{config['suite']}-{config_digest(config)[:12]}"
        t0 = time.perf_counter()
        result = SUITE_RUNNERS[config["suite"]](config)
        report_path = write_outputs(out_dir, config, result, time.perf_counter() - t0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 2
    except (PrivRobustError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    s = verify.summarize(result.checks)
    print(f"{config['suite']}: {s['passed']}/{s['asserted']} asserted checks passed; "
          f"{'PASS' if result.passed else 'FAIL'}; report {report_path}")
    return 0 if result.passed else 1


def cmd_emit_plots(args) -> int:
    path = Path(args.report)
    try:
        report = json.loads(path.read_text())
        out = Path(args.out) if args.out else path.with_name("plot_data.csv")
        out.write_text(emit_plot_data(report))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    return cmd_run(args) if args.command == "run" else cmd_emit_plots(args)


if __name__ == "__main__":
    sys.exit(main())
