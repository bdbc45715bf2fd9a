import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privrobust.errors import KernelFormatError, ParameterError
from privrobust.mechanism import (
    DiscreteDistribution,
    GradientPerturbation,
    StochasticKernel,
    kernel_from_config,
    load_kernel,
    make_constant_mechanism,
    make_identity,
    make_randomized_response,
    random_kernel,
    sample_output,
)
from privrobust.metrics import ldp_epsilon


def test_rr_binary():
    k = make_randomized_response(2, 0.25)
    np.testing.assert_array_equal(k.rows, [[0.75, 0.25], [0.25, 0.75]])


def test_rr_zero_flip_is_identity():
    np.testing.assert_array_equal(make_randomized_response(3, 0.0).rows, np.eye(3))


@pytest.mark.parametrize("k,p", [(2, 0.6), (3, -0.1), (1, 0.0), (4, 0.8)])
def test_rr_rejects_bad_params(k, p):
    with pytest.raises(ParameterError):
        make_randomized_response(k, p)


def test_rr_max_flip_is_uniform():
    np.testing.assert_allclose(make_randomized_response(4, 0.75).rows, np.full((4, 4), 0.25))


def test_constant_mechanism():
    k = make_constant_mechanism(3, 0)
    assert np.all(k.rows[:, 0] == 1.0) and np.all(k.rows[:, 1:] == 0.0)
    np.testing.assert_array_equal(make_constant_mechanism(1, 0).rows, [[1.0]])
    assert ldp_epsilon(k) == 0.0


def test_random_kernel_normalized_and_deterministic():
    a, b = random_kernel(1, 4, 5, 1e-3), random_kernel(1, 4, 5, 1e-3)
    np.testing.assert_allclose(a.rows.sum(axis=1), 1.0, atol=1e-12)
    assert a.rows.min() >= 1e-3
    np.testing.assert_array_equal(a.rows, b.rows)
    assert not np.array_equal(a.rows, random_kernel(2, 4, 5, 1e-3).rows)


def test_random_kernel_infeasible_floor():
    with pytest.raises(ParameterError):
        random_kernel(1, 2, 3, 0.5)


@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 8), st.floats(0, 1))
def test_random_kernel_invariants(seed, n_in, n_out, frac):
    floor = frac / n_out
    k = random_kernel(seed, n_in, n_out, floor)
    assert np.all(np.abs(k.rows.sum(axis=1) - 1) <= 1e-12)
    assert k.rows.min() >= floor - 1e-15


def test_kernel_validation():
    with pytest.raises(ParameterError):
        StochasticKernel([[0.5, 0.4]])
    with pytest.raises(ParameterError):
        StochasticKernel([[1.5, -0.5]])
    with pytest.raises(ParameterError):
        StochasticKernel(np.zeros((0, 2)))


def test_kernel_is_immutable():
    k = make_identity(2)
    with pytest.raises(ValueError):
        k.rows[0, 0] = 0.5


def test_labels():
    k = StochasticKernel([[1.0, 0.0], [0.0, 1.0]], input_labels=("a", "b"), output_labels=("x", "y"))
    assert k.input_index("b") == 1 and k.output_index("x") == 0
    assert sample_output(k, "b", np.random.default_rng(0)) == "y"
    with pytest.raises(ParameterError):
        k.input_index("c")


def test_sample_point_masses(rng):
    assert sample_output(make_identity(4), 2, rng) == 2
    const = make_constant_mechanism(3, 1)
    assert all(sample_output(const, d, rng) == 1 for d in range(3))


def test_sample_unknown_label(rng):
    with pytest.raises(ParameterError):
        sample_output(make_identity(2), 5, rng)


def test_sample_frequency_binomial_oracle():
    draws = sample_output(make_randomized_response(2, 0.25), 0, np.random.default_rng(7), size=100_000)
    freq = np.mean(draws == 0)
    # binomial sd at n=1e5 is 0.00137; the stated window is +-0.01
    assert abs(freq - 0.75) <= 0.01


def test_sample_is_reproducible():
    k = random_kernel(3, 3, 6, 0.01)
    a = sample_output(k, 1, np.random.default_rng(9), size=50)
    b = sample_output(k, 1, np.random.default_rng(9), size=50)
    np.testing.assert_array_equal(a, b)


def test_distribution_checks():
    assert len(DiscreteDistribution.uniform(5)) == 5
    with pytest.raises(ParameterError):
        DiscreteDistribution([0.5, 0.6])
    with pytest.raises(ParameterError):
        DiscreteDistribution([])


def test_perturbation_norm():
    for mode, seed in (("fixed", None), ("isotropic", 4)):
        v = GradientPerturbation(mode, 0.7, seed).vector(5)
        assert np.linalg.norm(v) == pytest.approx(0.7, abs=1e-15)
    np.testing.assert_array_equal(GradientPerturbation("fixed", 2.0).vector(3), [2.0, 0.0, 0.0])
    v = GradientPerturbation("fixed", 1.0, direction=(3.0, 4.0)).vector(2)
    np.testing.assert_allclose(v, [0.6, 0.8])


def test_perturbation_errors():
    with pytest.raises(ParameterError):
        GradientPerturbation("gauss", 1.0)
    with pytest.raises(ParameterError):
        GradientPerturbation("fixed", -1.0)
    with pytest.raises(ParameterError):
        GradientPerturbation("isotropic", 1.0)


def test_load_kernel_roundtrip(tmp_path):
    k = random_kernel(5, 3, 4, 0.01)
    p = tmp_path / "k.json"
    p.write_text(k.to_json())
    np.testing.assert_array_equal(load_kernel(str(p)).rows, k.rows)
    np.testing.assert_array_equal(load_kernel(k.to_json()).rows, k.rows)


def test_load_kernel_reports_row_line():
    text = '{\n  "inputs": 2,\n  "outputs": 2,\n  "rows": [\n    [0.5, 0.5],\n    [0.9, 0.2]\n  ]\n}'
    with pytest.raises(KernelFormatError) as exc:
        load_kernel(text)
    assert exc.value.lineno == 6
    assert str(exc.value).startswith("line 6")


@pytest.mark.parametrize(
    "obj",
    [
        {"inputs": 2, "outputs": 2, "rows": [[1.0, 0.0]]},
        {"inputs": 1, "outputs": 2, "rows": [[1.0]]},
        {"inputs": 1, "outputs": 2, "rows": [[1.5, -0.5]]},
        {"inputs": 1, "outputs": 2, "rows": [["a", 1]]},
        {"inputs": 1, "rows": [[1.0]]},
    ],
)
def test_load_kernel_rejects(obj):
    with pytest.raises(KernelFormatError):
        load_kernel(json.dumps(obj))


def test_load_kernel_bad_json():
    with pytest.raises(KernelFormatError) as exc:
        load_kernel('{\n "inputs": 1,\n "rows": [[1.0]\n')
    assert exc.value.lineno is not None


def test_kernel_from_config():
    assert kernel_from_config({"type": "rr", "k": 2, "flip_prob": 0.25}).rows[0, 1] == 0.25
    assert kernel_from_config({"type": "identity", "n": 3}).n_inputs == 3
    assert kernel_from_config({"type": "constant", "n": 2, "target": 1}).rows[1, 1] == 1.0
    k = kernel_from_config({"type": "random", "seed": 1, "n_in": 2, "n_out": 3, "min_prob": 0.01})
    np.testing.assert_array_equal(k.rows, random_kernel(1, 2, 3, 0.01).rows)
    assert kernel_from_config({"type": "rows", "rows": [[1.0]]}).n_outputs == 1
    with pytest.raises(ParameterError):
        kernel_from_config({"type": "laplace"})
