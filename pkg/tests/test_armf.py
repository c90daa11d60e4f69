import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dhgsil import armf
from dhgsil import diffcore as dc

import oracles


def pair_instance(ad=2.0, sd=0.1, am=3.0, sm=0.2, d=5.0):
    """Two cities d apart; city 0 is the source (mu), city 1 the target (delta)."""
    v = np.array([[1.0, 0.0, am, sm], [ad, sd, 1.0, 0.0]])
    dist = np.array([[0.0, d], [d, 0.0]])
    return v, dist


def test_attraction_and_repulsion_at_zero_distance():
    assert armf.attraction_at(2.0, 0.7, 0.0) == 2.0
    assert armf.repulsion_at(3.0, 0.7, 0.0) == 3.0


def test_no_attenuation_means_flat_attraction():
    for d in (0.0, 1.0, 1e3):
        assert armf.attraction_at(2.0, 0.0, d) == 2.0


def test_attraction_hand_value():
    assert armf.attraction_at(2.0, 0.1, 5.0) == pytest.approx(2 * math.exp(-0.25), abs=1e-15)
    assert armf.attraction_at(2.0, 0.1, 5.0) == pytest.approx(1.5576, abs=1e-4)


def test_flow_hand_value():
    v, dist = pair_instance()
    flow = armf.armf_flow(v, dist)
    assert flow[0, 1] == pytest.approx(6 * math.exp(-1.25), abs=1e-15)
    assert flow[0, 1] == pytest.approx(1.7190, abs=1e-4)


def test_unit_variables_without_decay_give_all_ones():
    v = np.tile([1.0, 0.0, 1.0, 0.0], (4, 1))
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(armf.armf_flow(v, rng.uniform(0, 100, (4, 4))), np.ones((4, 4)))


def test_diagonal_is_product_of_intensities():
    rng = np.random.default_rng(1)
    v = rng.uniform(0.1, 2, (5, 4))
    dist = rng.uniform(10, 100, (5, 5))
    np.fill_diagonal(dist, 0.0)
    np.testing.assert_allclose(np.diag(armf.armf_flow(v, dist)), v[:, 0] * v[:, 2], rtol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_flow_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.05, 2.0, (6, 4))
    v[:, [1, 3]] *= 0.02
    dist = rng.uniform(5, 200, (6, 6))
    dist = (dist + dist.T) / 2
    np.fill_diagonal(dist, 0.0)
    np.testing.assert_allclose(armf.armf_flow(v, dist), oracles.armf(v.tolist(), dist.tolist()),
                               rtol=0, atol=1e-12)


def test_batched_flow_matches_per_step():
    rng = np.random.default_rng(7)
    v = rng.uniform(0.1, 1.0, (3, 4, 4))
    dist = rng.uniform(0, 3, (4, 4))
    batched = armf.armf_flow(v, dist)
    for t in range(3):
        np.testing.assert_array_equal(batched[t], armf.armf_flow(v[t], dist))


positive = st.floats(0.05, 3.0)
attenuation = st.floats(0.05, 1.0)  # keeps d^2 sigma^2 well inside float range


@settings(max_examples=50, deadline=None)
@given(positive, attenuation, positive, attenuation, st.floats(0.1, 5), st.floats(0.01, 5))
def test_flow_monotone_in_distance_and_intensity(ad, sd, am, sm, d, step):
    near = armf.armf_flow(*pair_instance(ad, sd, am, sm, d))[0, 1]
    far = armf.armf_flow(*pair_instance(ad, sd, am, sm, d + step))[0, 1]
    assert far < near
    assert armf.armf_flow(*pair_instance(ad * 1.5, sd, am, sm, d))[0, 1] > near
    assert armf.armf_flow(*pair_instance(ad, sd, am * 1.5, sm, d))[0, 1] > near


def test_flow_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    v = rng.uniform(0.2, 1.0, (4, 4))
    dist = rng.uniform(0, 2, (4, 4))
    weights = rng.normal(size=(4, 4))
    fn = lambda t: dc.tsum(armf.armf_flow(t, dist) * weights)
    p = dc.parameter(v)
    analytic = dc.gradient(fn(p), [p])[0]
    numeric = dc.numerical_gradient(lambda a: fn(dc.as_tensor(a)).item(), v)
    assert dc.max_relative_error(analytic, numeric) < 1e-6


def test_distance_shape_mismatch():
    with pytest.raises(dc.ShapeError):
        armf.armf_flow(np.ones((3, 4)), np.zeros((2, 2)))


# -------------------------------------------------------------------- head

def test_head_outputs_strictly_positive_over_random_draws():
    rng = np.random.default_rng(4)
    h = rng.normal(size=(5, 8)) * 3
    for _ in range(1000):
        params = armf.init_head(rng, 8)
        params["head.w2"] = rng.normal(0, 5, params["head.w2"].shape)
        params["head.b2"] = rng.normal(0, 20, 4)
        assert np.all(armf.head_forward(h, params).data > 0)


def test_identical_rows_give_identical_variables():
    rng = np.random.default_rng(5)
    params = armf.init_head(rng, 8)
    h = np.tile(rng.normal(size=8), (3, 1))
    out = armf.head_forward(h, params, sigma_scale=0.01).data
    assert np.all(out == out[0])


def test_head_starts_at_requested_intensity():
    params = armf.init_head(np.random.default_rng(6), 8, alpha0=0.3)
    params["head.w2"] = np.zeros_like(params["head.w2"])
    out = armf.head_forward(np.ones((2, 8)), params, sigma_scale=0.01).data
    np.testing.assert_allclose(out[:, [0, 2]], 0.3 + armf.POSITIVE_FLOOR, rtol=1e-12)
    np.testing.assert_allclose(out[:, [1, 3]], 0.01 * (1.0 + armf.POSITIVE_FLOOR), rtol=1e-12)


def test_head_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    params = armf.init_head(rng, 6, hidden=5)
    params["head.w2"] = rng.normal(size=params["head.w2"].shape)
    h = rng.normal(size=(3, 6))
    for key in ("head.w1", "head.b1", "head.w2", "head.b2"):
        def alpha_delta_sum(x, key=key):
            return dc.tsum(armf.head_forward(h, {**params, key: x})[..., armf.ALPHA_DELTA])
        p = dc.parameter(params[key])
        analytic = dc.gradient(alpha_delta_sum(p), [p])[0]
        numeric = dc.numerical_gradient(lambda a: alpha_delta_sum(dc.as_tensor(a)).item(), params[key])
        assert dc.max_relative_error(analytic, numeric) < 1e-6, key


def test_head_width_mismatch():
    params = armf.init_head(np.random.default_rng(8), 8)
    with pytest.raises(dc.ShapeError, match="width"):
        armf.head_forward(np.ones((2, 5)), params)


def test_variables_csv_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    v = rng.uniform(size=(2, 3, 4))
    armf.write_variables_csv(tmp_path / "v.csv", v, ["2020-01", "2020-02"])
    steps, back = armf.read_variables_csv(tmp_path / "v.csv")
    assert steps == ["2020-01", "2020-02"]
    np.testing.assert_array_equal(back, v)
