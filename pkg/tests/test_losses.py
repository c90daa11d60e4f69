import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dhgsil import diffcore as dc
from dhgsil.armf import armf_flow
from dhgsil.config import RunConfig
from dhgsil.flowdata import SynthConfig, synthesize
from dhgsil.geo import distance_matrix
from dhgsil.losses import (contrastive_pair_loss, contrastive_terms, cross_city_loss, cross_time_loss,
                           flow_error, flow_totals)
from dhgsil.model import ModelState, forecast_variables, prepare, static_forward
from dhgsil.training import total_loss

import oracles

MARGIN0 = RunConfig(margin_delta=0.0, margin_mu=0.0)


def test_hinge_hand_values():
    assert contrastive_pair_loss(1.0, 1.0, 0.1) == 0.0
    assert contrastive_pair_loss(1.0, -0.5, 0.1) == pytest.approx(0.6, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5))
def test_hinge_zero_flow_difference_zero_margin(rho_alpha):
    assert contrastive_pair_loss(0.0, rho_alpha, 0.0) == 0.0


def two_step_instance():
    flows = np.zeros((2, 2, 2))
    variables = np.ones((2, 2, 4))
    return flows, variables


def test_cross_time_identical_steps_zero_margin():
    flows, variables = two_step_instance()
    assert cross_time_loss(flows, variables, 0, 0, 1, MARGIN0) == 0.0


def test_cross_time_sign_violation():
    flows, variables = two_step_instance()
    flows[1, 1, 0] = 0.2               # inflow of city 0 rises by 0.2
    variables[1, 0, 0] = 1.0 - 0.3    # while its attraction falls by 0.3
    cfg = RunConfig(margin_delta=0.1, margin_mu=0.0)
    # outflow of city 0 is unchanged, so the repulsion term is max(0, 0) = 0
    assert cross_time_loss(flows, variables, 0, 0, 1, cfg) == pytest.approx(0.16, abs=1e-15)
    assert cross_time_loss(flows, variables, 0, 1, 0, cfg) == cross_time_loss(flows, variables, 0, 0, 1, cfg)


def test_cross_city_cases():
    flows = np.zeros((1, 2, 2))
    variables = np.ones((1, 2, 4))
    assert cross_city_loss(flows, variables, 0, 1, 0, MARGIN0) == 0.0
    flows[0, 0, 0] = 0.2      # city 0 receives more
    variables[0, 0, 0] = 0.7  # but is less attractive
    cfg = RunConfig(margin_delta=0.1, margin_mu=0.0)
    value = cross_city_loss(flows, variables, 0, 1, 0, cfg)
    # inflow and outflow of city 0 both rise by 0.2; only the attraction moved
    assert value == pytest.approx(0.16, abs=1e-15)
    assert cross_city_loss(flows, variables, 1, 0, 0, cfg) == value


def test_flow_totals_can_exclude_self_flow():
    flows = np.arange(8.0).reshape(2, 2, 2)
    inflow, outflow = flow_totals(flows)
    np.testing.assert_array_equal(inflow, flows.sum(axis=1))
    inflow, outflow = flow_totals(flows, include_self=False)
    np.testing.assert_array_equal(outflow, [[1.0, 2.0], [5.0, 6.0]])


def test_vectorized_contrastive_sums_match_single_terms():
    rng = np.random.default_rng(0)
    flows = rng.uniform(size=(4, 3, 3))
    variables = rng.uniform(size=(4, 3, 4))
    cfg = RunConfig(margin_delta=0.2, margin_mu=0.05, contrastive_normalize=False)
    city, time = contrastive_terms(flows, dc.as_tensor(variables), cfg)
    want_city = sum(cross_city_loss(flows, variables, a, b, t, cfg)
                    for t in range(4) for a in range(3) for b in range(a + 1, 3))
    want_time = sum(cross_time_loss(flows, variables, j, a, b, cfg)
                    for j in range(3) for a in range(4) for b in range(a + 1, 4))
    assert city.item() == pytest.approx(want_city, abs=1e-12)
    assert time.item() == pytest.approx(want_time, abs=1e-12)


def test_flow_error_is_sum_of_frobenius_norms():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(3, 2, 2)), rng.uniform(size=(3, 2, 2))
    want = sum(np.linalg.norm(a[t] - b[t]) for t in range(3))
    assert flow_error(dc.as_tensor(a), b).item() == pytest.approx(want, abs=1e-14)
    assert flow_error(dc.as_tensor(a), b, squared=True).item() == pytest.approx(((a - b) ** 2).sum(), abs=1e-14)


# --------------------------------------------------------------- total loss

def small_problem(n_cities=3, n_steps=3, seed=0, **cfg):
    cities, series, _ = synthesize(SynthConfig(n_cities=n_cities, n_steps=n_steps, seed=seed,
                                               lat_range=(30, 31), lon_range=(120, 121)))
    config = RunConfig(epsilon_km=80.0, width=8, theta=4, window=2, seed=seed, **cfg)
    state = ModelState.create(config, cities, series.flows)
    return cities, series, config, state


def params_of(state):
    return {k: dc.as_tensor(v) for k, v in state.params.items()}


@pytest.mark.parametrize("seed", range(3))
def test_total_loss_matches_loop_oracle(seed):
    cities, series, config, state = small_problem(n_cities=3 + seed, n_steps=3 + (seed % 2), seed=seed)
    prep = prepare(config, cities, series.flows)
    params = params_of(state)
    fwd = static_forward(params, prep, config)
    targets = np.arange(config.window, series.n_steps)
    fc = forecast_variables(fwd, params, prep, config, targets).data
    want = oracles.total_loss(series.flows.tolist(), fwd.variables.data.tolist(), fc.tolist(), targets.tolist(),
                              prep.dist.tolist(), config.margin_delta, config.margin_mu)
    assert total_loss(params, prep, config).total.item() == pytest.approx(want, rel=0, abs=1e-10)


def test_perfect_reconstruction_with_zero_margin_is_zero():
    cities, series, _ = synthesize(SynthConfig(n_cities=3, n_steps=1, noise=0.0, seed=1))
    variables = np.ones((1, 3, 4))
    variables[..., [1, 3]] = 1e-3
    dist = distance_matrix(cities)
    flows = armf_flow(variables, dist)
    fwd_err = flow_error(dc.as_tensor(armf_flow(variables, dist)), flows).item()
    city, time = contrastive_terms(flows, dc.as_tensor(variables), MARGIN0)
    assert fwd_err + city.item() + time.item() == 0.0


def test_reconstruction_only_single_step():
    cities, series, config, state = small_problem(n_steps=1, contrastive=False)
    prep = prepare(config, cities, series.flows)
    params = params_of(state)
    fwd = static_forward(params, prep, config)
    loss = total_loss(params, prep, config)
    assert loss.total.item() == pytest.approx(np.linalg.norm(fwd.static_flows.data[0] - series.flows[0]), abs=1e-14)
    assert loss.cross_city.item() == 0.0 and loss.cross_time.item() == 0.0


def test_contrastive_terms_are_non_negative_and_sum_to_total():
    cities, series, config, state = small_problem(n_steps=4)
    loss = total_loss(params_of(state), prepare(config, cities, series.flows), config)
    assert loss.cross_city.item() >= 0 and loss.cross_time.item() >= 0
    assert loss.total.item() == pytest.approx(
        loss.reconstruction.item() + loss.cross_city.item() + loss.cross_time.item(), abs=1e-15)


def test_nc_variant_changes_only_contrastive_terms():
    cities, series, config, state = small_problem(n_steps=4)
    prep = prepare(config, cities, series.flows)
    full = total_loss(params_of(state), prep, config).values()
    nc = total_loss(params_of(state), prep, config.replace(variant="NC")).values()
    assert nc["reconstruction"] == full["reconstruction"]
    assert nc["cross_city"] == 0.0 and nc["cross_time"] == 0.0
    assert full["cross_city"] > 0 or full["cross_time"] > 0
