import numpy as np
import pytest

from privrobust.attack import regression_task, translation_task
from privrobust.errors import ParameterError
from privrobust.robustness import (
    lipschitz_estimate,
    measure_input_robustness,
    predict_alpha,
    verify_privacy_robustness,
)
from privrobust.seeding import derive_rng

REG = regression_task([1.0], [-0.5])


def test_zero_radius():
    assert measure_input_robustness(translation_task(), 0.0).measured == 0.0


@pytest.mark.parametrize("r", [0.1, 0.25, 0.5])
@pytest.mark.parametrize("dim", [1, 3])
def test_translation_measures_radius(r, dim):
    m = measure_input_robustness(translation_task(dim), r, n_samples=200)
    assert m.measured == pytest.approx(r, abs=1e-3)


def test_regression_below_lipschitz():
    C = lipschitz_estimate(REG)
    for r in (0.01, 0.05):
        assert measure_input_robustness(REG, r, n_samples=300).measured <= C * r + 1e-12


def test_regression_matches_grid_oracle():
    r = 0.1
    m = measure_input_robustness(REG, r, n_samples=400, confine=True, seed=3)
    xs = REG.sample(derive_rng(3, "robust-x"), 400)
    deltas = np.linspace(-r, r, 4001)
    xp = np.clip(xs + deltas[None, :], 0.0, 1.0)
    exact = np.abs(REG.grad(xp[..., None]) - REG.grad(xs[:, None, :]))[..., 0].max(axis=1).mean()
    assert m.measured <= exact + 1e-9
    assert m.measured == pytest.approx(exact, rel=1e-3)


def test_output_level():
    m = measure_input_robustness(translation_task(), 0.1, n_samples=100, level="output")
    assert 0.0 < m.measured <= 0.1 + 1e-12
    with pytest.raises(ParameterError):
        measure_input_robustness(translation_task(), 0.1, level="hessian")


def test_measurement_is_deterministic():
    a = measure_input_robustness(REG, 0.2, n_samples=100, seed=5)
    b = measure_input_robustness(REG, 0.2, n_samples=100, seed=5)
    assert a == b


def test_lipschitz_estimate():
    assert lipschitz_estimate(translation_task()) == 1.0
    est = lipschitz_estimate(REG, samples=5000)
    assert est <= REG.lipschitz_bound()
    # sampled pairs give a lower bound on sup g' = 2.5
    assert 2.4 <= est <= 2.5
    with pytest.raises(ParameterError):
        lipschitz_estimate(REG, samples=10)


def test_predict_alpha_examples():
    p = predict_alpha(1.0, 0.5, 1.0, 0.5, 1.0, 1.0, 0.0, 10**6)
    assert p.alpha == pytest.approx(1.25)
    p = predict_alpha(1.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 10**12)
    assert p.alpha == pytest.approx(0.25, abs=1e-6)
    neg = predict_alpha(1.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 100)
    assert neg.negative_second_term
    with pytest.raises(ParameterError):
        predict_alpha(1.0, 0.5, 1.0, 0.5, 0.0, 1.0, 0.0, 100)


def test_translation_grid_holds_at_large_distortion():
    checks = verify_privacy_robustness(translation_task(), [0.4, 0.8], [0.1, 0.25], rounds=200,
                                       seeds=range(2), n_samples=100)
    assert len(checks) == 4 and all(c.holds for c in checks)
    assert all(c.info["lipschitz_bound_holds"] for c in checks)


def test_translation_known_counterexample():
    # measured robustness is exactly r, while alpha tends to r/2 as the leakage approaches 1
    checks = verify_privacy_robustness(translation_task(), [0.1], [0.5], rounds=1000, seeds=range(5),
                                       n_samples=100)
    c = checks[0]
    assert c.lhs == pytest.approx(0.5, abs=1e-9)
    assert c.info["eps_p"] > 0.85
    assert c.failed
