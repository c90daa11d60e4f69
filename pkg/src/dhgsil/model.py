"""End-to-end model: graph encoding per step, interpretable head, sequential forecast.

Per observed step t the city input is a static embedding plus a learned
projection of the city's step-t outflow and inflow profiles. The graph layers
propagate it with that step's mobility kernel, the head turns the result into
four positive variables per city, and the ARMF composition gives the step's
flow matrix. For forecasting, the log-variables of the last ``window`` steps
are fed channel by channel (shared weights) through the N-BEATS stack as
offsets from the last observed value.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import armf, dhgcn, seqenc
from . import diffcore as dc
from .config import RunConfig
from .diffcore import Tensor
from .geo import CitySet, distance_matrix, graph_from_distances


PROFILE_FLOOR = 1e-3


class InsufficientHistoryError(ValueError):
    pass


def nbeats_shape(config: RunConfig) -> seqenc.NBeatsShape:
    return seqenc.NBeatsShape(backcast=config.window, forecast=1, width=config.width,
                              theta=config.theta, trunk_layers=config.trunk_layers,
                              trend_degree=config.trend_degree)


def sigma_scale_for(dist: np.ndarray) -> float:
    """Attenuation unit (1/km): inverse median inter-city distance."""
    off = dist[~np.eye(dist.shape[0], dtype=bool)]
    return 1.0 / float(np.median(off))


def init_params(config: RunConfig, n_cities: int, flows: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Random initial parameters; with ``flows`` the head starts at the mean self-flow scale."""
    alpha0 = 0.5
    if flows is not None:
        diag = np.diagonal(np.asarray(flows), axis1=-2, axis2=-1)
        alpha0 = float(np.sqrt(max(diag.mean(), 1e-4)))
    rng = np.random.default_rng(config.seed)
    e = config.embed_dim
    params = {
        "embed": rng.normal(0.0, 1.0, (n_cities, e)),
        "profile.w": rng.normal(0.0, 1.0 / np.sqrt(2 * n_cities), (2 * n_cities, e)),
    }
    params.update(dhgcn.init_layers(rng, [e] * (config.gcn_layers + 1)))
    head_in = e + (2 * n_cities if config.feature_wiring == "head" else 0)
    params.update(armf.init_head(rng, head_in, config.head_hidden, alpha0))
    params.update(seqenc.init_compression(rng, n_cities))
    params.update(seqenc.init_nbeats(rng, nbeats_shape(config)))
    return params


@dataclass
class ModelState:
    config: RunConfig
    cities: CitySet
    params: dict[str, np.ndarray]
    optimizer: dc.OptimizerState = field(default_factory=dc.OptimizerState)

    @property
    def n_cities(self) -> int:
        return len(self.cities)

    @classmethod
    def create(cls, config: RunConfig, cities: CitySet, flows=None) -> "ModelState":
        return cls(config, cities, init_params(config, len(cities), flows), dc.OptimizerState(lr=config.lr))


@dataclass
class Prepared:
    """Constant, data-derived inputs for one flow window."""

    flows: np.ndarray
    dist: np.ndarray
    kernels: np.ndarray
    profiles: np.ndarray
    sigma_scale: float


def flow_profiles(flows: np.ndarray) -> np.ndarray:
    """(T, C, 2C) per-city [outflow row, inflow column], log-scaled to roughly [-1.3, 1]."""
    prof = np.concatenate([flows, np.swapaxes(flows, 1, 2)], axis=2)
    return np.log(prof + PROFILE_FLOOR) / 3.0 + 1.0


def prepare(config: RunConfig, cities: CitySet, flows) -> Prepared:
    arr = np.asarray(getattr(flows, "flows", flows), dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1:] != (len(cities), len(cities)):
        raise dc.ShapeError(f"flows {arr.shape} do not match {len(cities)} cities")
    dist = distance_matrix(cities)
    graph = graph_from_distances(dist, config.epsilon_km)
    if config.variant in ("SIL",):
        kernels = np.broadcast_to(np.eye(len(cities)), arr.shape)
    elif config.variant == "GCN-SIL":
        kernels = np.broadcast_to(dhgcn.plain_gcn_kernel(graph), arr.shape)
    else:
        kernels = dhgcn.build_kernels(arr, graph, dist, config.decay_length)
    profiles = flow_profiles(arr)
    return Prepared(arr, dist, kernels, profiles, sigma_scale_for(dist))


def encode(params: Mapping[str, Tensor], prep: Prepared, config: RunConfig) -> Tensor:
    """City representations (T, C, embed_dim) for every step of ``prep``."""
    h0 = params["embed"] + prep.profiles @ params["profile.w"]
    return dhgcn.dhgcn_forward(prep.kernels, h0, dhgcn.layer_list(params))


def head_inputs(h: Tensor, params: Mapping[str, Tensor], flows: np.ndarray, config: RunConfig) -> Tensor:
    if config.feature_wiring != "head":
        return h
    feats = seqenc.step_features(flows, params)  # (T, 2C)
    t, c = h.shape[0], h.shape[1]
    tiled = feats.reshape((t, 1, feats.shape[-1])) + np.zeros((1, c, 1))
    return dc.concat([h, tiled], axis=-1)


@dataclass
class Forward:
    raw: Tensor          # (T, C, 4) unconstrained head outputs
    variables: Tensor    # (T, C, 4) positive variables
    static_flows: Tensor  # (T, C, C)
    encoded: Tensor      # (T, C, embed_dim)


def static_forward(params: Mapping[str, Tensor], prep: Prepared, config: RunConfig) -> Forward:
    h = encode(params, prep, config)
    raw = armf.head_raw(head_inputs(h, params, prep.flows, config), params)
    variables = armf.variables_from_raw(raw, prep.sigma_scale)
    return Forward(raw, variables, armf.armf_flow(variables, prep.dist), h)


def forecast_variables(fwd: Forward, params: Mapping[str, Tensor], prep: Prepared, config: RunConfig,
                       targets: np.ndarray) -> Tensor:
    """Next-step positive variables (P, C, 4) for each target position.

    ``targets`` are step indices into ``prep``; position p uses steps p-window..p-1.
    The stack sees each log-variable channel as offsets from its last value and
    predicts the next offset, softly bounded to ``config.forecast_bound``.
    """
    L = config.window
    t_total, c = fwd.raw.shape[0], fwd.raw.shape[1]
    idx = np.asarray(targets)[:, None] - L + np.arange(L)[None, :]
    if idx.size and (idx.min() < 0 or idx.max() >= t_total):
        raise InsufficientHistoryError(f"forecast needs {L} prior steps")
    p = idx.shape[0]
    if config.variant == "DHG":
        enc = fwd.encoded[idx].mean(axis=1)  # (P, C, e)
        flows_avg = prep.flows[idx].mean(axis=1)
        raw = armf.head_raw(head_inputs(enc, params, flows_avg, config), params)
        return armf.variables_from_raw(raw, prep.sigma_scale)
    variables = dc.as_tensor(fwd.variables.data) if config.forecast_detach else fwd.variables
    channels = dc.log(variables).reshape((t_total, c * 4))
    n_var = c * 4
    if config.feature_wiring == "channels":
        feats = seqenc.step_features(prep.flows, params)
        channels = dc.concat([channels, feats], axis=1)
    k = channels.shape[1]
    windows = channels[idx].transpose(0, 2, 1).reshape((p * k, L))
    last = windows[:, L - 1:L]
    out = seqenc.nbeats_forecast(windows - last, params, nbeats_shape(config))
    step = out.forecast
    if config.forecast_bound > 0:
        step = dc.tanh(step * (1.0 / config.forecast_bound)) * config.forecast_bound
    nxt = (step + last).reshape((p, k))
    return dc.exp(nxt[:, :n_var].reshape((p, c, 4)))


def forecast_flow(state: ModelState, series) -> np.ndarray:
    """Predicted flow matrix for the step after the end of ``series``."""
    flows = np.asarray(getattr(series, "flows", series), dtype=np.float64)
    L = state.config.window
    if flows.shape[0] < L:
        raise InsufficientHistoryError(f"need at least {L} steps, got {flows.shape[0]}")
    return predict_variables_and_flow(state, flows[-L:])[1]


def predict_variables_and_flow(state: ModelState, window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    config = state.config
    prep = prepare(config, state.cities, window)
    params = {k: dc.as_tensor(v) for k, v in state.params.items()}
    fwd = static_forward(params, prep, config)
    variables = forecast_variables(fwd, params, prep, config, np.array([prep.flows.shape[0]]))
    return variables.data[0], armf.armf_flow(variables, prep.dist).data[0]


def fitted_variables(state: ModelState, series) -> np.ndarray:
    """Per-step (T, C, 4) variables inferred for an observed series."""
    prep = prepare(state.config, state.cities, series)
    params = {k: dc.as_tensor(v) for k, v in state.params.items()}
    return static_forward(params, prep, state.config).variables.data


def permute_state(state: ModelState, order) -> ModelState:
    """Relabel cities: new city i is old city ``order[i]``; every city-indexed weight follows."""
    order = np.asarray(order)
    c = state.n_cities
    p = {k: np.array(v) for k, v in state.params.items()}
    p["embed"] = p["embed"][order]
    p["profile.w"] = np.concatenate([p["profile.w"][:c][order], p["profile.w"][c:][order]])
    pair = (order[:, None] * c + order[None, :]).ravel()
    p["compress.w"] = p["compress.w"][pair][:, order]
    p["compress.b"] = p["compress.b"][order]
    if state.config.feature_wiring == "head":
        e = state.config.embed_dim
        w1 = p["head.w1"]
        p["head.w1"] = np.concatenate([w1[:e], w1[e:e + c][order], w1[e + c:]])
    return ModelState(state.config, state.cities.permuted(order), p, dc.OptimizerState(lr=state.config.lr))
